//! Result rows and CSV output.

use std::fmt::Write as _;

/// How a measured value is judged against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    Below,
    /// Reported only; always passes.
    Info,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::Below => "<",
            Relation::Info => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub case: String,
    pub parameters: String,
    pub quantity: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
}

impl ResultRow {
    pub fn pass(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.value <= self.threshold,
            Relation::Below => self.value < self.threshold,
            Relation::Info => true,
        }
    }
}

pub const CSV_HEADER: &str = "experiment,case,parameters,quantity,value,relation,threshold,pass";

fn float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(128 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            field(&r.experiment),
            field(&r.case),
            field(&r.parameters),
            field(&r.quantity),
            float(r.value),
            r.relation.symbol(),
            if r.relation == Relation::Info { String::new() } else { float(r.threshold) },
            r.pass()
        );
    }
    out
}

/// Pass counts for one suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Summary {
    pub rows: usize,
    pub checked: usize,
    pub failed: usize,
}

impl Summary {
    pub fn of(rows: &[ResultRow]) -> Self {
        Self {
            rows: rows.len(),
            checked: rows.iter().filter(|r| r.relation != Relation::Info).count(),
            failed: rows.iter().filter(|r| !r.pass()).count(),
        }
    }

    pub fn line(&self, id: &str) -> String {
        let verdict = if self.failed == 0 { "PASS" } else { "FAIL" };
        format!(
            "suite {id}: {verdict} ({} rows, {} checked, {} failed)",
            self.rows, self.checked, self.failed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, relation: Relation) -> ResultRow {
        ResultRow {
            experiment: "e".into(),
            case: "c,1".into(),
            parameters: "r=1".into(),
            quantity: "q".into(),
            value,
            relation,
            threshold: 1.0,
        }
    }

    #[test]
    fn csv_has_header_and_fixed_precision() {
        let csv = to_csv(&[row(0.5, Relation::AtMost), row(2.0, Relation::Info)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "e,\"c,1\",r=1,q,5.0000000000000000e-1,<=,1.0000000000000000e0,true");
        assert_eq!(lines[2], "e,\"c,1\",r=1,q,2.0000000000000000e0,info,,true");
    }

    #[test]
    fn pass_rules() {
        assert!(row(1.0, Relation::AtMost).pass());
        assert!(!row(1.0, Relation::Below).pass());
        assert!(!row(f64::NAN, Relation::AtMost).pass());
        let s = Summary::of(&[row(2.0, Relation::AtMost), row(0.0, Relation::Info)]);
        assert_eq!(s, Summary { rows: 2, checked: 1, failed: 1 });
        assert!(s.line("x").starts_with("suite x: FAIL"));
    }
}
