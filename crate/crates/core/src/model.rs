//! LP instances: the dense problem representation, its JSON file format,
//! the consensus-block / subvector partition, slack upper bounds and a
//! seeded generator of instances that are feasible by construction.
//!
//! A problem is
//!
//! ```text
//! minimize    <cost, z>
//! subject to  A_G z + b_G <= 0
//!             A_H z + b_H  = 0
//!             lower <= z <= upper
//! ```
//!
//! with every bound finite.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed problem file: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("lower bound exceeds upper bound at index {index}: {lower} > {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),
}

/// A stack of affine rows `matrix * x + offset`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineSystem {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineSystem {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Self {
        Self { matrix, offset }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    /// Value of row `r` at `x`.
    pub fn row_value(&self, r: usize, x: &[f64]) -> f64 {
        dot(&self.matrix[r], x) + self.offset[r]
    }

    /// All row values at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row_value(r, x)).collect()
    }

    /// `matrix^T * y`, accumulated into `out`.
    pub fn add_transpose_product(&self, y: &[f64], out: &mut [f64]) {
        for (row, &yr) in self.matrix.iter().zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
    }

    /// The sub-system made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> AffineSystem {
        AffineSystem {
            matrix: rows.iter().map(|&r| self.matrix[r].clone()).collect(),
            offset: rows.iter().map(|&r| self.offset[r]).collect(),
        }
    }

    fn validate(&self, n: usize, name: &str) -> Result<(), ModelError> {
        if self.matrix.len() != self.offset.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{name} has {} rows but its offset has length {}",
                self.matrix.len(),
                self.offset.len()
            )));
        }
        for (r, row) in self.matrix.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "{name} row {r} has {} columns, expected {n}",
                    row.len()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A validated LP instance. Construct with [`ProblemSpec::new`] or
/// [`parse_problem`]; both enforce the invariants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct ProblemSpec {
    pub n: usize,
    pub cost: Vec<f64>,
    /// `G(z) = A_G z + b_G <= 0`
    pub ineq: AffineSystem,
    /// `H(z) = A_H z + b_H = 0`
    pub eq: AffineSystem,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(
        cost: Vec<f64>,
        ineq: AffineSystem,
        eq: AffineSystem,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let spec = ProblemSpec {
            n: cost.len(),
            cost,
            ineq,
            eq,
            lower,
            upper,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n;
        if n == 0 {
            return Err(ModelError::DimensionMismatch("n must be at least 1".into()));
        }
        for (name, len) in [
            ("cost", self.cost.len()),
            ("lower", self.lower.len()),
            ("upper", self.upper.len()),
        ] {
            if len != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "{name} has length {len}, expected n = {n}"
                )));
            }
        }
        self.ineq.validate(n, "A_G")?;
        self.eq.validate(n, "A_H")?;

        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.cost) {
            return Err(ModelError::NonFinite("cost"));
        }
        if !finite(&self.lower) || !finite(&self.upper) {
            return Err(ModelError::NonFinite("bounds"));
        }
        if !self.ineq.matrix.iter().all(|r| finite(r)) || !finite(&self.ineq.offset) {
            return Err(ModelError::NonFinite("inequality system"));
        }
        if !self.eq.matrix.iter().all(|r| finite(r)) || !finite(&self.eq.offset) {
            return Err(ModelError::NonFinite("equality system"));
        }
        for (index, (&lower, &upper)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lower > upper {
                return Err(ModelError::InvertedBounds {
                    index,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Number of inequality rows.
    pub fn p(&self) -> usize {
        self.ineq.rows()
    }

    /// Number of equality rows.
    pub fn q(&self) -> usize {
        self.eq.rows()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        dot(&self.cost, z)
    }

    /// `clip(x, lower, upper)` componentwise.
    pub fn project_box(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }

    /// Largest violation of any constraint (inequality, equality, box) at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let ineq = self
            .ineq
            .eval(z)
            .into_iter()
            .fold(0.0_f64, |m, g| m.max(g));
        let eq = self.eq.eval(z).into_iter().fold(0.0_f64, |m, h| m.max(h.abs()));
        let bx = z
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(0.0_f64, |m, (&v, (&l, &u))| m.max(l - v).max(v - u));
        ineq.max(eq).max(bx)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemFile::from(self.clone()))
            .expect("problem serialization cannot fail")
    }
}

/// On-disk layout of a problem file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ProblemFile {
    n: usize,
    cost: Vec<f64>,
    #[serde(rename = "A_G")]
    a_g: Vec<Vec<f64>>,
    #[serde(rename = "b_G")]
    b_g: Vec<f64>,
    #[serde(rename = "A_H")]
    a_h: Vec<Vec<f64>>,
    #[serde(rename = "b_H")]
    b_h: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<ProblemFile> for ProblemSpec {
    type Error = ModelError;

    fn try_from(f: ProblemFile) -> Result<Self, ModelError> {
        let spec = ProblemSpec {
            n: f.n,
            cost: f.cost,
            ineq: AffineSystem::new(f.a_g, f.b_g),
            eq: AffineSystem::new(f.a_h, f.b_h),
            lower: f.lower,
            upper: f.upper,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ProblemSpec> for ProblemFile {
    fn from(s: ProblemSpec) -> Self {
        ProblemFile {
            n: s.n,
            cost: s.cost,
            a_g: s.ineq.matrix,
            b_g: s.ineq.offset,
            a_h: s.eq.matrix,
            b_h: s.eq.offset,
            lower: s.lower,
            upper: s.upper,
        }
    }
}

/// Parses and validates the JSON problem format.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ModelError> {
    let file: ProblemFile = serde_json::from_str(text)?;
    ProblemSpec::try_from(file)
}

/// Assignment of constraint rows to consensus blocks and of columns to
/// subvectors. The column split is shared by every block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub blocks: usize,
    pub subvectors: usize,
    pub ineq_rows: Vec<Vec<usize>>,
    pub eq_rows: Vec<Vec<usize>>,
    pub col_ranges: Vec<Range<usize>>,
}

/// Deals rows round-robin over `blocks` consensus blocks and splits the
/// columns into `subvectors` contiguous ranges whose sizes differ by at most
/// one (the first `n % subvectors` ranges are the longer ones).
pub fn partition(
    spec: &ProblemSpec,
    blocks: usize,
    subvectors: usize,
) -> Result<PartitionPlan, ModelError> {
    if blocks < 1 {
        return Err(ModelError::InvalidPartition(
            "number of consensus blocks must be at least 1".into(),
        ));
    }
    if subvectors < 1 {
        return Err(ModelError::InvalidPartition(
            "number of subvectors must be at least 1".into(),
        ));
    }
    if subvectors > spec.n {
        return Err(ModelError::InvalidPartition(format!(
            "{subvectors} subvectors exceed n = {}",
            spec.n
        )));
    }
    let deal = |rows: usize| -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); blocks];
        for r in 0..rows {
            out[r % blocks].push(r);
        }
        out
    };
    let base = spec.n / subvectors;
    let extra = spec.n % subvectors;
    let mut col_ranges = Vec::with_capacity(subvectors);
    let mut start = 0;
    for l in 0..subvectors {
        let len = base + usize::from(l < extra);
        col_ranges.push(start..start + len);
        start += len;
    }
    Ok(PartitionPlan {
        blocks,
        subvectors,
        ineq_rows: deal(spec.p()),
        eq_rows: deal(spec.q()),
        col_ranges,
    })
}

impl PartitionPlan {
    /// Checks the plan against a problem: disjoint exhaustive row sets,
    /// contiguous nonempty column ranges covering `0..n`.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidPartition(msg));
        if self.blocks < 1 || self.ineq_rows.len() != self.blocks || self.eq_rows.len() != self.blocks
        {
            return bad("row sets do not match the number of blocks".into());
        }
        for (sets, rows, name) in [
            (&self.ineq_rows, spec.p(), "inequality"),
            (&self.eq_rows, spec.q(), "equality"),
        ] {
            let mut seen = vec![false; rows];
            for &r in sets.iter().flatten() {
                if r >= rows || seen[r] {
                    return bad(format!("{name} row {r} is out of range or assigned twice"));
                }
                seen[r] = true;
            }
            if seen.iter().any(|s| !s) {
                return bad(format!("some {name} rows are not assigned to any block"));
            }
        }
        if self.col_ranges.len() != self.subvectors || self.subvectors < 1 {
            return bad("column ranges do not match the number of subvectors".into());
        }
        let mut next = 0;
        for range in &self.col_ranges {
            if range.start != next || range.end <= range.start {
                return bad(format!("column range {range:?} is empty or not contiguous"));
            }
            next = range.end;
        }
        if next != spec.n {
            return bad(format!("column ranges cover 0..{next}, expected 0..{}", spec.n));
        }
        Ok(())
    }

    pub fn subvector_sizes(&self) -> Vec<usize> {
        self.col_ranges.iter().map(|r| r.len()).collect()
    }

    /// Rows owned by block `i`, gathered from the full systems.
    pub fn block_systems(&self, spec: &ProblemSpec, i: usize) -> (AffineSystem, AffineSystem) {
        (
            spec.ineq.select_rows(&self.ineq_rows[i]),
            spec.eq.select_rows(&self.eq_rows[i]),
        )
    }
}

/// Per-block upper bounds for the slack variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackBounds {
    /// `upper[i][t]` bounds the slack of the `t`-th inequality row of block `i`.
    pub upper: Vec<Vec<f64>>,
    /// `(block, global row)` pairs whose row is positive everywhere on the
    /// box, so the inequality can never hold. Their bound is clamped to 0.
    pub never_active: Vec<(usize, usize)>,
}

impl SlackBounds {
    pub fn has_flagged_rows(&self) -> bool {
        !self.never_active.is_empty()
    }
}

/// Minimum of the affine row `a.x + b` over the box `[lower, upper]`.
pub fn row_box_minimum(a: &[f64], b: f64, lower: &[f64], upper: &[f64]) -> f64 {
    a.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&aj, (&l, &u))| (aj * l).min(aj * u))
        .sum::<f64>()
        + b
}

/// `u_Y = -min_{[l,u]} G_r`, from interval arithmetic on each affine row.
pub fn slack_upper_bounds(spec: &ProblemSpec, plan: &PartitionPlan) -> SlackBounds {
    let mut upper = Vec::with_capacity(plan.blocks);
    let mut never_active = Vec::new();
    for (i, rows) in plan.ineq_rows.iter().enumerate() {
        let mut block = Vec::with_capacity(rows.len());
        for &r in rows {
            let bound = -row_box_minimum(
                &spec.ineq.matrix[r],
                spec.ineq.offset[r],
                &spec.lower,
                &spec.upper,
            );
            if bound < 0.0 {
                never_active.push((i, r));
                block.push(0.0);
            } else {
                block.push(bound);
            }
        }
        upper.push(block);
    }
    SlackBounds {
        upper,
        never_active,
    }
}

/// Knobs for [`generate_instance`]. All draws are uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    /// Lower bounds are drawn from `lower_range`.
    pub lower_range: (f64, f64),
    /// Box widths `upper - lower` are drawn from `width_range`.
    pub width_range: (f64, f64),
    /// Matrix entries are drawn from `[-coef_scale, coef_scale]`.
    pub coef_scale: f64,
    /// Cost entries are drawn from `[-cost_scale, cost_scale]`.
    pub cost_scale: f64,
    /// Slack margins `s` are drawn from `margin_range`.
    pub margin_range: (f64, f64),
    /// The construction point sits at `lower + t * width` with `t` drawn here.
    pub interior_range: (f64, f64),
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            lower_range: (-1.0, 0.0),
            width_range: (1.0, 2.0),
            coef_scale: 1.0,
            cost_scale: 1.0,
            margin_range: (0.1, 1.0),
            interior_range: (0.25, 0.75),
        }
    }
}

/// A generated instance together with the point it was built around.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedInstance {
    pub spec: ProblemSpec,
    /// Construction point: strictly inside the box, `G(x0) = -margin`, `H(x0) = 0`.
    pub x0: Vec<f64>,
    pub margin: Vec<f64>,
}

/// Draws a feasible instance: an interior point `x0`, random `A_G`, `A_H`
/// and cost, `b_G = -A_G x0 - s` with `s > 0` and `b_H = -A_H x0`.
/// Deterministic in `seed`.
pub fn generate_instance(
    seed: u64,
    n: usize,
    p: usize,
    q: usize,
    opts: &GeneratorOptions,
) -> Result<GeneratedInstance, ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidGenerator("n must be at least 1".into()));
    }
    if q > n {
        return Err(ModelError::InvalidGenerator(format!(
            "q = {q} equality rows exceed n = {n}"
        )));
    }
    let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
    if !ordered(opts.lower_range)
        || !ordered(opts.width_range)
        || !ordered(opts.margin_range)
        || !ordered(opts.interior_range)
        || opts.width_range.0 < 0.0
        || opts.margin_range.0 <= 0.0
        || opts.interior_range.0 < 0.0
        || opts.interior_range.1 > 1.0
        || !(opts.coef_scale.is_finite() && opts.coef_scale > 0.0)
        || !(opts.cost_scale.is_finite() && opts.cost_scale >= 0.0)
    {
        return Err(ModelError::InvalidGenerator(format!("{opts:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(a, b): (f64, f64)| -> f64 {
        if a == b {
            a
        } else {
            rng.random_range(a..b)
        }
    };

    let lower: Vec<f64> = (0..n).map(|_| draw(opts.lower_range)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + draw(opts.width_range)).collect();
    let x0: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| l + draw(opts.interior_range) * (u - l))
        .collect();
    let cost: Vec<f64> = (0..n)
        .map(|_| draw((-opts.cost_scale, opts.cost_scale)))
        .collect();
    let coef = (-opts.coef_scale, opts.coef_scale);

    let a_g: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| draw(coef)).collect())
        .collect();
    let margin: Vec<f64> = (0..p).map(|_| draw(opts.margin_range)).collect();
    let b_g: Vec<f64> = a_g
        .iter()
        .zip(&margin)
        .map(|(row, s)| -dot(row, &x0) - s)
        .collect();

    let a_h: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..n).map(|_| draw(coef)).collect())
        .collect();
    let b_h: Vec<f64> = a_h.iter().map(|row| -dot(row, &x0)).collect();

    let spec = ProblemSpec::new(
        cost,
        AffineSystem::new(a_g, b_g),
        AffineSystem::new(a_h, b_h),
        lower,
        upper,
    )?;
    Ok(GeneratedInstance { spec, x0, margin })
}
