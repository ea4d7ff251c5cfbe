//! Binary classification metrics, AUC and training-time accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} labels vs {1} predictions")]
    Length(usize, usize),
    #[error("value {0} at position {1} is not a binary label")]
    NotBinary(u8, usize),
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("nothing to score")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::Length(y_true.len(), y_pred.len()));
    }
    let mut c = Confusion::default();
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            _ => return Err(MetricsError::NotBinary(if t > 1 { t } else { p }, i)),
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(accuracy, precision, recall, f1)`; undefined ratios are 0.
pub fn prf1(c: &Confusion) -> (f64, f64, f64, f64) {
    let accuracy = ratio(c.tp + c.tn, c.total());
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (accuracy, precision, recall, f1)
}

/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` over all positive/negative pairs, by ranking.
pub fn auc(scores: &[f64], y_true: &[u8]) -> Result<f64> {
    if scores.len() != y_true.len() {
        return Err(MetricsError::Length(y_true.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    if let Some(i) = y_true.iter().position(|&y| y > 1) {
        return Err(MetricsError::NotBinary(y_true[i], i));
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sweep tie groups in ascending order; count negatives strictly below
    let mut wins = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let p = group.iter().filter(|&&k| y_true[k] == 1).count();
        let q = group.len() - p;
        wins += p as f64 * neg_below as f64 + 0.5 * p as f64 * q as f64;
        neg_below += q;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    /// `None` when timing is not recorded.
    pub tt_seconds: Option<f64>,
}

pub const REPORT_HEADER: [&str; 7] = [
    "Model",
    "Accuracy",
    "F1-score",
    "Recall",
    "Precision",
    "AUC",
    "TT",
];

impl MetricsReport {
    /// Scores hard predictions and continuous scores for the positive class.
    pub fn evaluate(
        model: &str,
        y_true: &[u8],
        y_pred: &[u8],
        scores: &[f64],
        tt_seconds: Option<f64>,
    ) -> Result<Self> {
        if y_true.is_empty() {
            return Err(MetricsError::Empty);
        }
        let c = confusion(y_true, y_pred)?;
        let (accuracy, precision, recall, f1) = prf1(&c);
        let auc = auc(scores, y_true)?;
        Ok(Self {
            model: model.to_string(),
            accuracy,
            precision,
            recall,
            f1,
            auc,
            tt_seconds,
        })
    }

    /// Table cells: metrics as percentages and TT in seconds, two decimals each.
    pub fn cells(&self) -> [String; 7] {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        [
            self.model.clone(),
            pct(self.accuracy),
            pct(self.f1),
            pct(self.recall),
            pct(self.precision),
            pct(self.auc),
            self.tt_seconds
                .map_or_else(|| "n/a".to_string(), |t| format!("{t:.2}")),
        ]
    }
}

/// Report rows as CSV under [`REPORT_HEADER`].
pub fn report_csv(rows: &[MetricsReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.cells()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv output is UTF-8")
}

/// Report rows as a Markdown table.
pub fn report_markdown(rows: &[MetricsReport]) -> String {
    let mut out = format!("| {} |\n|", REPORT_HEADER.join(" | "));
    out.push_str(&"---|".repeat(REPORT_HEADER.len()));
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} |\n", r.cells().join(" | ")));
    }
    out
}

/// Wall-clock seconds spent in `op`.
pub fn time_block<T>(op: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = op();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let t = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let p = [1, 0, 1, 1, 0, 0, 1, 0, 0, 1];
        assert_eq!(
            confusion(&t, &p).unwrap(),
            Confusion {
                tp: 3,
                tn: 3,
                fp: 2,
                fn_: 2
            }
        );
        let swapped = confusion(&[1, 1, 0], &[0, 1, 1]).unwrap();
        let orig = confusion(&[0, 1, 1], &[1, 1, 0]).unwrap();
        assert_eq!((swapped.fp, swapped.fn_), (orig.fn_, orig.fp));
        assert!(matches!(
            confusion(&[1], &[1, 0]),
            Err(MetricsError::Length(1, 2))
        ));
        assert!(matches!(
            confusion(&[2], &[1]),
            Err(MetricsError::NotBinary(2, 0))
        ));
    }

    #[test]
    fn prf1_examples() {
        assert_eq!(
            prf1(&Confusion {
                tp: 1,
                tn: 1,
                fp: 0,
                fn_: 0
            }),
            (1.0, 1.0, 1.0, 1.0)
        );
        let (a, p, r, f) = prf1(&Confusion {
            tp: 3,
            tn: 4,
            fp: 1,
            fn_: 2,
        });
        assert!((a - 0.7).abs() < 1e-15);
        assert!((p - 0.75).abs() < 1e-15);
        assert!((r - 0.6).abs() < 1e-15);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        let (_, p, _, f) = prf1(&Confusion {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 3,
        });
        assert_eq!((p, f), (0.0, 0.0));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(MetricsError::SingleClass)
        ));
    }

    #[test]
    fn report_cells() {
        let r = MetricsReport::evaluate(
            "HGCAE+KNN",
            &[1, 0, 1, 0],
            &[1, 0, 0, 0],
            &[0.9, 0.8, 0.4, 0.3],
            Some(1.234),
        )
        .unwrap();
        assert_eq!(
            r.cells(),
            [
                "HGCAE+KNN",
                "75.00",
                "66.67",
                "50.00",
                "100.00",
                "75.00",
                "1.23"
            ]
            .map(String::from)
        );
        let mut r = r;
        r.tt_seconds = None;
        assert_eq!(r.cells()[6], "n/a");
    }

    #[test]
    fn timing() {
        let ((), t) = time_block(|| {});
        assert!(t < 1e-3);
        let ((), t) = time_block(|| std::thread::sleep(std::time::Duration::from_millis(100)));
        assert!((t - 0.1).abs() < 0.05, "{t}");
    }

    fn brute_auc(s: &[f64], y: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn auc_matches_brute_force(
            pairs in proptest::collection::vec((0u8..=1, 0u8..8), 2..=50),
        ) {
            let y: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            // coarse scores so ties are common
            let s: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 8.0).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let a = auc(&s, &y).unwrap();
            prop_assert!((a - brute_auc(&s, &y)).abs() <= 1e-12);
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((auc(&t, &y).unwrap() - a).abs() <= 1e-12);
        }

        #[test]
        fn prf1_matches_definitions(pairs in proptest::collection::vec((0u8..=1, 0u8..=1), 1..=50)) {
            let y: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let c = confusion(&y, &p).unwrap();
            let tp = y.iter().zip(&p).filter(|(a, b)| **a == 1 && **b == 1).count();
            let tn = y.iter().zip(&p).filter(|(a, b)| **a == 0 && **b == 0).count();
            let fp = y.iter().zip(&p).filter(|(a, b)| **a == 0 && **b == 1).count();
            let fn_ = y.iter().zip(&p).filter(|(a, b)| **a == 1 && **b == 0).count();
            prop_assert_eq!(c, Confusion { tp, tn, fp, fn_ });
            let (acc, prec, rec, f1) = prf1(&c);
            prop_assert_eq!(acc, (tp + tn) as f64 / y.len() as f64);
            let e_prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let e_rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let e_f1 = if e_prec + e_rec == 0.0 { 0.0 } else { 2.0 * e_prec * e_rec / (e_prec + e_rec) };
            prop_assert_eq!((prec, rec, f1), (e_prec, e_rec, e_f1));
        }
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport::evaluate(
            "HGCAE+KNN",
            &[1, 0, 1, 0],
            &[1, 0, 0, 0],
            &[0.9, 0.1, 0.4, 0.3],
            None,
        )
        .unwrap();
        let csv = report_csv(std::slice::from_ref(&r));
        assert_eq!(csv, "Model,Accuracy,F1-score,Recall,Precision,AUC,TT\nHGCAE+KNN,75.00,66.67,50.00,100.00,100.00,n/a\n");
        let md = report_markdown(&[r]);
        assert_eq!(md.lines().count(), 3);
        assert!(md
            .starts_with("| Model | Accuracy | F1-score | Recall | Precision | AUC | TT |\n|---|"));
        assert!(md.ends_with("| HGCAE+KNN | 75.00 | 66.67 | 50.00 | 100.00 | 100.00 | n/a |\n"));
    }
}
