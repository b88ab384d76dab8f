//! Synthetic loan book shaped like the Lending Club export.
//!
//! Ten informative raw features drive a logistic default model; six further
//! columns are drawn independently of the outcome. Rows are ordered by issue
//! period, and the base interest rate moves between three regimes along that
//! order. Some cells are blanked and some incomes are inflated 50-fold.

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnSchema, Schema};
use crate::error::{Error, Result};
use crate::{rng, stats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    /// Target share of charged-off loans.
    pub default_rate: f64,
    /// Chance that a row has one blank cell.
    pub missing_rate: f64,
    /// Chance that a row's income is inflated 50-fold.
    pub spike_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 5000,
            seed: 42,
            default_rate: 0.2,
            missing_rate: 0.02,
            spike_rate: 0.002,
        }
    }
}

pub const INFORMATIVE: [&str; 10] = [
    "loan_amnt",
    "term",
    "int_rate",
    "installment",
    "grade",
    "annual_inc",
    "dti",
    "revol_util",
    "home_ownership",
    "mort_acc",
];

pub const NOISE: [&str; 6] = [
    "open_acc",
    "total_acc",
    "pub_rec",
    "revol_bal",
    "purpose",
    "verification_status",
];

const GRADES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];
const HOME: [&str; 3] = ["MORTGAGE", "OWN", "RENT"];
const PURPOSE: [&str; 5] = [
    "credit_card",
    "debt_consolidation",
    "home_improvement",
    "other",
    "small_business",
];
const VERIFICATION: [&str; 3] = ["Not Verified", "Source Verified", "Verified"];
const TERMS: [&str; 2] = ["36 months", "60 months"];

pub fn schema() -> Schema {
    let cat = |name: &str, values: &[&str]| ColumnSchema::categorical(name, Some(values));
    let columns = vec![
        ColumnSchema::numeric("loan_amnt"),
        cat("term", &TERMS),
        ColumnSchema::numeric("int_rate"),
        ColumnSchema::numeric("installment"),
        cat("grade", &GRADES),
        ColumnSchema::numeric("annual_inc"),
        ColumnSchema::numeric("dti"),
        ColumnSchema::numeric("revol_util"),
        cat("home_ownership", &HOME),
        ColumnSchema::numeric("mort_acc"),
        ColumnSchema::numeric("open_acc"),
        ColumnSchema::numeric("total_acc"),
        ColumnSchema::numeric("pub_rec"),
        ColumnSchema::numeric("revol_bal"),
        cat("purpose", &PURPOSE),
        cat("verification_status", &VERIFICATION),
        ColumnSchema {
            name: "issue_d".into(),
            kind: crate::dataset::ColumnKind::Skip,
            allowed_categories: None,
        },
        ColumnSchema::label("loan_status"),
    ];
    Schema::new(columns).expect("static schema is valid")
}

struct Loan {
    cells: Vec<String>,
    logit: f64,
}

fn annuity(principal: f64, annual_rate: f64, months: f64) -> f64 {
    let r = annual_rate / 1200.0;
    principal * r / (1.0 - (1.0 + r).powf(-months))
}

fn draw(r: &mut rng::Rng, i: usize, rows: usize) -> Loan {
    let normal = |r: &mut rng::Rng, m: f64, s: f64| Normal::new(m, s).expect("valid normal").sample(r);
    let regime = [10.5, 13.5, 11.5][(3 * i / rows.max(1)).min(2)];

    let risk: f64 = normal(r, 0.0, 1.0);
    let grade = ((risk + 1.6) * 2.0).clamp(0.0, 6.0) as usize;
    let int_rate = (regime + 2.6 * grade as f64 + normal(r, 0.0, 1.2)).clamp(5.0, 31.0);
    let long_term = r.random::<f64>() < 0.2 + 0.05 * grade as f64;
    let months = if long_term { 60.0 } else { 36.0 };
    let annual_inc: f64 = LogNormal::new(11.0, 0.5).expect("valid lognormal").sample(r);
    let loan_amnt = (annual_inc * (0.1 + 0.15 * r.random::<f64>()))
        .clamp(1000.0, 40000.0)
        .round();
    let installment = annuity(loan_amnt, int_rate, months);
    let dti = (18.0 + 3.0 * risk + normal(r, 0.0, 7.0)).clamp(0.0, 45.0);
    let revol_util = (52.0 + 8.0 * risk + normal(r, 0.0, 22.0)).clamp(0.0, 130.0);
    let home = match r.random::<f64>() {
        u if u < 0.48 => 0,
        u if u < 0.58 => 1,
        _ => 2,
    };
    let mort_acc: f64 = if home == 0 {
        1.0 + Poisson::new(1.5).expect("valid poisson").sample(r)
    } else {
        Poisson::new(0.4).expect("valid poisson").sample(r)
    };
    let open_acc = 2.0 + Poisson::new(9.0).expect("valid poisson").sample(r);
    let total_acc = open_acc + Poisson::new(14.0).expect("valid poisson").sample(r);
    let pub_rec = if r.random::<f64>() < 0.15 { 1.0 } else { 0.0 };
    let revol_bal: f64 = LogNormal::<f64>::new(9.4, 0.8)
        .expect("valid lognormal")
        .sample(r)
        .round();
    let purpose = r.random_range(0..PURPOSE.len());
    let verification = r.random_range(0..VERIFICATION.len());

    let logit = -0.5 * risk - 0.09 * (int_rate - 13.0) - 0.35 * f64::from(u8::from(long_term))
        + 0.45 * (annual_inc.ln() - 11.0)
        - 0.025 * (dti - 18.0)
        - 0.006 * (revol_util - 52.0)
        - 0.004 * (installment / annual_inc * 1200.0 - 3.0).max(0.0) * 10.0
        - 0.000_01 * (loan_amnt - 14000.0)
        + [0.15, 0.05, -0.15][home]
        + 0.08 * mort_acc.min(4.0);

    let cells = vec![
        format!("{loan_amnt}"),
        TERMS[usize::from(long_term)].to_string(),
        format!("{:.2}", int_rate),
        format!("{:.2}", installment),
        GRADES[grade].to_string(),
        format!("{:.0}", annual_inc),
        format!("{:.2}", dti),
        format!("{:.1}", revol_util),
        HOME[home].to_string(),
        format!("{mort_acc}"),
        format!("{open_acc}"),
        format!("{total_acc}"),
        format!("{pub_rec}"),
        format!("{revol_bal}"),
        PURPOSE[purpose].to_string(),
        VERIFICATION[verification].to_string(),
        format!("2015-{:02}", 1 + 12 * i / rows.max(1)),
    ];
    Loan { cells, logit }
}

/// Intercept that makes the mean repayment probability `target`.
fn calibrate(logits: &[f64], target: f64) -> f64 {
    let mean_p = |b: f64| logits.iter().map(|z| stats::sigmoid(z + b)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// CSV text with a header row, in the layout described by [`schema`].
pub fn generate_csv(config: &SynthConfig) -> Result<String> {
    if config.rows < 10 {
        return Err(Error::invalid("synthetic data needs at least 10 rows"));
    }
    if !(0.0 < config.default_rate && config.default_rate < 1.0) {
        return Err(Error::invalid("default_rate must lie in (0, 1)"));
    }
    let mut r = rng::stream(config.seed, 0x5e1);
    let loans: Vec<Loan> = (0..config.rows).map(|i| draw(&mut r, i, config.rows)).collect();
    let logits: Vec<f64> = loans.iter().map(|l| l.logit).collect();
    let bias = calibrate(&logits, 1.0 - config.default_rate);

    let schema = schema();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    let feature_cells = INFORMATIVE.len() + NOISE.len();
    for mut loan in loans {
        let paid = r.random::<f64>() < stats::sigmoid(loan.logit + bias);
        if r.random::<f64>() < config.spike_rate {
            let inc: f64 = loan.cells[5].parse().expect("formatted above");
            loan.cells[5] = format!("{:.0}", inc * 50.0);
        }
        if r.random::<f64>() < config.missing_rate {
            let j = r.random_range(0..feature_cells);
            loan.cells[j] = "NA".into();
        }
        loan.cells
            .push(if paid { "Fully Paid" } else { "Charged Off" }.to_string());
        w.write_record(&loan.cells)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Artifact(e.to_string()))
}
