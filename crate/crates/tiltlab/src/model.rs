//! Instances: reference models and twist functions on small symbol trees.
//!
//! A reference model is an autoregressive distribution over sequences of
//! length `T` from an alphabet of size `B`, stored as one conditional
//! next-symbol row per prefix of length `< T`. A twist is a strictly positive
//! function on prefixes, normalized so the empty prefix has value 1; its
//! values on full-length sequences play the role of the terminal reward. An
//! [`Instance`] bundles the two and is the unit the rest of the crate
//! operates on.
//!
//! Prefixes of length `t` are indexed `0..B^t` by reading symbols as base-`B`
//! digits, so the children of prefix `p` occupy `p*B..(p+1)*B` at the next
//! level. All per-level tables in this crate use that layout.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;

/// Largest number of leaves (`B^T`) an instance may have; everything in this
/// crate enumerates the full tree, so instances beyond this are rejected at
/// construction.
pub const MAX_LEAVES: usize = 1 << 20;

/// Row sums may deviate from 1 by at most this much before renormalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Symbol alphabet `{0, 1, ..., B-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    /// Requires at least two symbols.
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid_argument(
                "alphabet size",
                "must be at least 2",
                size,
            ));
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Iterates the symbols in order.
    pub fn symbols(&self) -> impl Iterator<Item = u32> {
        0..self.size as u32
    }
}

/// Number of prefixes of length `level` over an alphabet of size `b`.
pub(crate) fn level_size(b: usize, level: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..level {
        n = n.checked_mul(b).ok_or(Error::StateSpaceTooLarge {
            states: u128::MAX,
            cap: MAX_LEAVES as u128,
        })?;
        if n > MAX_LEAVES {
            return Err(Error::StateSpaceTooLarge {
                states: n as u128,
                cap: MAX_LEAVES as u128,
            });
        }
    }
    Ok(n)
}

/// A (possibly empty) sequence of symbols.
///
/// Ordering is lexicographic with shorter prefixes before their extensions,
/// which coincides with depth-first preorder of the tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix(Vec<u32>);

impl Prefix {
    pub fn root() -> Self {
        Prefix(Vec::new())
    }

    pub fn new(symbols: Vec<u32>) -> Self {
        Prefix(symbols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u32] {
        &self.0
    }

    /// Extends by one symbol.
    pub fn child(&self, symbol: u32) -> Self {
        let mut syms = self.0.clone();
        syms.push(symbol);
        Prefix(syms)
    }

    /// Drops the last symbol; `None` at the root.
    pub fn parent(&self) -> Option<Self> {
        if self.is_root() {
            None
        } else {
            Some(Prefix(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Base-`b` integer index of this prefix within its level.
    pub fn index(&self, b: usize) -> usize {
        self.0.iter().fold(0usize, |acc, &s| acc * b + s as usize)
    }

    /// Inverse of [`Prefix::index`] for a prefix of length `level`.
    pub fn from_index(level: usize, mut index: usize, b: usize) -> Self {
        let mut syms = vec![0u32; level];
        for slot in syms.iter_mut().rev() {
            *slot = (index % b) as u32;
            index /= b;
        }
        Prefix(syms)
    }
}

impl fmt::Display for Prefix {
    /// The root prints as `-`; other prefixes as dot-joined symbols, e.g.
    /// `0.2.1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return f.write_str("-");
        }
        let mut first = true;
        for s in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for Prefix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "-" {
            return Ok(Prefix::root());
        }
        let mut syms = Vec::new();
        for part in s.split('.') {
            let sym: u32 = part.parse().map_err(|_| Error::InvalidArgument {
                name: "prefix",
                reason: "symbols must be nonnegative integers",
                value: s.to_string(),
            })?;
            syms.push(sym);
        }
        Ok(Prefix(syms))
    }
}

/// Renormalizes a probability row in place until division by its own sum no
/// longer changes any entry, so the map is idempotent and serialized rows
/// parse back to identical bits.
pub(crate) fn renormalize_row_fixpoint(row: &mut [f64]) {
    for _ in 0..8 {
        let s = neumaier_sum(row);
        if s == 1.0 {
            return;
        }
        let mut changed = false;
        for v in row.iter_mut() {
            let nv = *v / s;
            if nv.to_bits() != v.to_bits() {
                *v = nv;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

pub(crate) fn validate_row(row: &[f64], context: impl Fn() -> String) -> Result<()> {
    for (k, &v) in row.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidProbabilities {
                context: context(),
                reason: format!("entry {k} is {v}"),
            });
        }
    }
    let s = neumaier_sum(row);
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidProbabilities {
            context: context(),
            reason: format!("row sums to {s}, outside tolerance {ROW_SUM_TOLERANCE}"),
        });
    }
    Ok(())
}

/// Autoregressive reference distribution on length-`T` sequences.
///
/// `rows[t]` concatenates the conditional next-symbol rows of every length-`t`
/// prefix, so the row of the prefix with index `p` is
/// `rows[t][p*B..(p+1)*B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceModel {
    alphabet: Alphabet,
    horizon: usize,
    rows: Vec<Vec<f64>>,
}

impl ReferenceModel {
    /// Validates shapes and row sums (within [`ROW_SUM_TOLERANCE`]), then
    /// renormalizes every row to its fixpoint.
    pub fn new(alphabet: Alphabet, horizon: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::invalid_argument(
                "horizon",
                "must be at least 1",
                horizon,
            ));
        }
        let b = alphabet.size();
        level_size(b, horizon)?;
        if rows.len() != horizon {
            return Err(Error::dimension_mismatch(
                "reference model levels",
                horizon,
                rows.len(),
            ));
        }
        let mut rows = rows;
        for (t, level_rows) in rows.iter_mut().enumerate() {
            let parents = level_size(b, t)?;
            if level_rows.len() != parents * b {
                return Err(Error::dimension_mismatch(
                    format!("reference rows at level {t}"),
                    parents * b,
                    level_rows.len(),
                ));
            }
            for p in 0..parents {
                let row = &mut level_rows[p * b..(p + 1) * b];
                validate_row(row, || {
                    format!("reference row at prefix `{}`", Prefix::from_index(t, p, b))
                })?;
                renormalize_row_fixpoint(row);
            }
        }
        Ok(ReferenceModel {
            alphabet,
            horizon,
            rows,
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn b(&self) -> usize {
        self.alphabet.size()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Conditional row of the length-`level` prefix with index `parent`.
    pub fn row(&self, level: usize, parent: usize) -> &[f64] {
        let b = self.b();
        &self.rows[level][parent * b..(parent + 1) * b]
    }

    /// All rows of one level, concatenated in prefix-index order.
    pub fn rows_at(&self, level: usize) -> &[f64] {
        &self.rows[level]
    }

    /// Unconditional prefix probabilities per level: `out[t][p]` is the
    /// reference probability of the length-`t` prefix with index `p`, with
    /// `out[0] = [1.0]`.
    pub fn path_probabilities(&self) -> Vec<Vec<f64>> {
        let b = self.b();
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(vec![1.0]);
        for t in 0..self.horizon {
            let prev: &Vec<f64> = &out[t];
            let mut next = vec![0.0; prev.len() * b];
            for (p, &mass) in prev.iter().enumerate() {
                let row = self.row(t, p);
                for (k, &c) in row.iter().enumerate() {
                    next[p * b + k] = mass * c;
                }
            }
            out.push(next);
        }
        out
    }
}

/// Strictly positive prefix function with value 1 at the root.
///
/// `values[t]` lists the twist over length-`t` prefixes in index order; the
/// final level doubles as the terminal reward.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistModel {
    b: usize,
    values: Vec<Vec<f64>>,
}

impl TwistModel {
    pub fn new(b: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid_argument(
                "twist levels",
                "need at least the root level and one more",
                values.len(),
            ));
        }
        let horizon = values.len() - 1;
        level_size(b, horizon)?;
        for (t, level_values) in values.iter().enumerate() {
            let expected = level_size(b, t)?;
            if level_values.len() != expected {
                return Err(Error::dimension_mismatch(
                    format!("twist values at level {t}"),
                    expected,
                    level_values.len(),
                ));
            }
            for (p, &v) in level_values.iter().enumerate() {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::NonPositive {
                        context: format!("twist at prefix `{}`", Prefix::from_index(t, p, b)),
                        reason: format!("value is {v}"),
                    });
                }
            }
        }
        if values[0][0] != 1.0 {
            return Err(Error::InvalidArgument {
                name: "twist root value",
                reason: "must equal 1 exactly",
                value: values[0][0].to_string(),
            });
        }
        Ok(TwistModel { b, values })
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    /// Twist of the length-`level` prefix with index `p`.
    pub fn value(&self, level: usize, p: usize) -> f64 {
        self.values[level][p]
    }

    /// All twist values of one level, in prefix-index order.
    pub fn values_at(&self, level: usize) -> &[f64] {
        &self.values[level]
    }

    /// Natural logs of all values, same layout.
    pub fn log_values(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|lv| lv.iter().map(|v| v.ln()).collect())
            .collect()
    }
}

/// A reference model paired with a twist on the same tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    id: String,
    reference: ReferenceModel,
    twist: TwistModel,
}

impl Instance {
    pub fn new(id: impl Into<String>, reference: ReferenceModel, twist: TwistModel) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid_argument("instance id", "must be nonempty", "\"\""));
        }
        if id.contains('\n') || id.contains('\r') {
            return Err(Error::invalid_argument(
                "instance id",
                "must not contain line breaks",
                id,
            ));
        }
        if reference.b() != twist.b() || reference.horizon() != twist.horizon() {
            return Err(Error::dimension_mismatch(
                "instance reference/twist shape",
                format!("B={}, T={}", reference.b(), reference.horizon()),
                format!("B={}, T={}", twist.b(), twist.horizon()),
            ));
        }
        Ok(Instance {
            id,
            reference,
            twist,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn reference(&self) -> &ReferenceModel {
        &self.reference
    }

    pub fn twist(&self) -> &TwistModel {
        &self.twist
    }

    pub fn b(&self) -> usize {
        self.reference.b()
    }

    pub fn horizon(&self) -> usize {
        self.reference.horizon()
    }

    /// One-step lookahead normalizers: `out[t][p]` is the reference-expected
    /// twist of a one-symbol extension of the length-`t` prefix `p`, for
    /// `t < T`. This is the normalizing constant of the locally tilted row at
    /// `p`.
    pub fn step_normalizers(&self) -> Vec<Vec<f64>> {
        let b = self.b();
        let t_max = self.horizon();
        let mut out = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let parents = self.twist.values_at(t).len();
            let next = self.twist.values_at(t + 1);
            let mut z = vec![0.0; parents];
            for (p, zp) in z.iter_mut().enumerate() {
                let row = self.reference.row(t, p);
                let mut acc = crate::numeric::RunningSum::new();
                for (k, &c) in row.iter().enumerate() {
                    acc.add(c * next[p * b + k]);
                }
                *zp = acc.value();
            }
            out.push(z);
        }
        out
    }

    /// Locally tilted next-symbol rows: the reference row at each prefix
    /// reweighted by the child twists and normalized. Layout matches
    /// [`ReferenceModel::rows_at`].
    pub fn stepwise_tilted_rows(&self) -> Vec<Vec<f64>> {
        let b = self.b();
        let z = self.step_normalizers();
        let mut out = Vec::with_capacity(self.horizon());
        for t in 0..self.horizon() {
            let next = self.twist.values_at(t + 1);
            let parents = z[t].len();
            let mut rows = vec![0.0; parents * b];
            for p in 0..parents {
                let row = self.reference.row(t, p);
                for k in 0..b {
                    rows[p * b + k] = row[k] * next[p * b + k] / z[t][p];
                }
            }
            out.push(rows);
        }
        out
    }

    /// Parses the text form produced by [`Instance::to_text`]. Records may
    /// appear in any order but must cover every prefix exactly once; rows are
    /// renormalized to fixpoint after parsing.
    pub fn parse(text: &str) -> Result<Self> {
        parse_instance(text)
    }

    /// Canonical text form: a header followed by one record per prefix in
    /// depth-first preorder. Interior records hold the conditional row and
    /// the twist value; leaf records hold the twist only. Floats are written
    /// with 17 significant digits so parsing reproduces them exactly.
    pub fn to_text(&self) -> String {
        let b = self.b();
        let t_max = self.horizon();
        let mut out = String::new();
        out.push_str(&format!("id {}\n", self.id));
        out.push_str(&format!("B {b}\n"));
        out.push_str(&format!("T {t_max}\n"));
        // Explicit stack to keep deep trees off the call stack.
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        while let Some((level, p)) = stack.pop() {
            let prefix = Prefix::from_index(level, p, b);
            out.push_str(&prefix.to_string());
            if level < t_max {
                for &c in self.reference.row(level, p) {
                    out.push_str(&format!(" {c:.16e}"));
                }
            }
            out.push_str(&format!(" {:.16e}\n", self.twist.value(level, p)));
            if level < t_max {
                for k in (0..b).rev() {
                    stack.push((level + 1, p * b + k));
                }
            }
        }
        out
    }

    /// Reads and parses an instance file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Instance::parse(&text)
    }

    /// Writes the canonical text form to a file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses the instance text format. See [`Instance::to_text`].
pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut id: Option<String> = None;
    let mut b: Option<usize> = None;
    let mut t_max: Option<usize> = None;
    // (level, index) -> (row if interior, twist), plus the line for errors.
    let mut records: Vec<Vec<Option<(Option<Vec<f64>>, f64)>>> = Vec::new();
    let mut pending: Vec<(usize, Prefix, Vec<f64>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = match line.split_once(char::is_whitespace) {
            Some((h, r)) => (h, r.trim()),
            None => (line, ""),
        };
        match head {
            "id" if id.is_none() => {
                if rest.is_empty() {
                    return Err(Error::Parse {
                        line: lineno,
                        reason: "empty instance id".into(),
                    });
                }
                id = Some(rest.to_string());
            }
            "B" if b.is_none() => {
                b = Some(rest.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    reason: format!("invalid alphabet size `{rest}`"),
                })?);
            }
            "T" if t_max.is_none() => {
                t_max = Some(rest.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    reason: format!("invalid horizon `{rest}`"),
                })?);
            }
            _ => {
                let prefix: Prefix = head.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    reason: format!("invalid prefix token `{head}`"),
                })?;
                let mut values = Vec::new();
                for tok in rest.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        reason: format!("invalid float `{tok}`"),
                    })?;
                    values.push(v);
                }
                pending.push((lineno, prefix, values));
            }
        }
    }

    let id = id.ok_or(Error::Parse {
        line: 0,
        reason: "missing `id` header".into(),
    })?;
    let b = b.ok_or(Error::Parse {
        line: 0,
        reason: "missing `B` header".into(),
    })?;
    let t_max = t_max.ok_or(Error::Parse {
        line: 0,
        reason: "missing `T` header".into(),
    })?;
    let alphabet = Alphabet::new(b)?;
    if t_max < 1 {
        return Err(Error::Parse {
            line: 0,
            reason: format!("horizon must be at least 1, got {t_max}"),
        });
    }
    level_size(b, t_max)?;

    for t in 0..=t_max {
        records.push(vec![None; level_size(b, t)?]);
    }
    for (lineno, prefix, values) in pending {
        let level = prefix.len();
        if level > t_max {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("prefix `{prefix}` is longer than the horizon {t_max}"),
            });
        }
        if prefix.symbols().iter().any(|&s| s as usize >= b) {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("prefix `{prefix}` uses a symbol outside the alphabet of size {b}"),
            });
        }
        let expected = if level < t_max { b + 1 } else { 1 };
        if values.len() != expected {
            return Err(Error::Parse {
                line: lineno,
                reason: format!(
                    "record for `{prefix}` has {} values, expected {expected}",
                    values.len()
                ),
            });
        }
        let idx = prefix.index(b);
        if records[level][idx].is_some() {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("duplicate record for prefix `{prefix}`"),
            });
        }
        let (row, twist) = if level < t_max {
            (Some(values[..b].to_vec()), values[b])
        } else {
            (None, values[0])
        };
        records[level][idx] = Some((row, twist));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(t_max);
    let mut twists: Vec<Vec<f64>> = Vec::with_capacity(t_max + 1);
    for (t, level_records) in records.into_iter().enumerate() {
        let mut level_rows = if t < t_max {
            Vec::with_capacity(level_records.len() * b)
        } else {
            Vec::new()
        };
        let mut level_twists = Vec::with_capacity(level_records.len());
        for (p, rec) in level_records.into_iter().enumerate() {
            let (row, twist) = rec.ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing record for prefix `{}`", Prefix::from_index(t, p, b)),
            })?;
            if let Some(row) = row {
                level_rows.extend_from_slice(&row);
            }
            level_twists.push(twist);
        }
        if t < t_max {
            rows.push(level_rows);
        }
        twists.push(level_twists);
    }

    // Root twist is a convention, not data; tolerate rounding in the file.
    if (twists[0][0] - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Parse {
            line: 0,
            reason: format!("root twist must be 1, got {}", twists[0][0]),
        });
    }
    twists[0][0] = 1.0;

    let reference = ReferenceModel::new(alphabet, t_max, rows)?;
    let twist = TwistModel::new(b, twists)?;
    Instance::new(id, reference, twist)
}

/// Backward-recursive value function of the terminal reward under the
/// reference model, rescaled so the root value is exactly 1.
///
/// The result satisfies `V(p) = sum_k row(p)[k] * V(p.k)` for every interior
/// prefix up to floating-point rounding, and its final level is the rescaled
/// reward.
pub fn optimal_twist(reference: &ReferenceModel, terminal_reward: &[f64]) -> Result<TwistModel> {
    let b = reference.b();
    let t_max = reference.horizon();
    let leaves = level_size(b, t_max)?;
    if terminal_reward.len() != leaves {
        return Err(Error::dimension_mismatch(
            "terminal reward length",
            leaves,
            terminal_reward.len(),
        ));
    }
    for (i, &v) in terminal_reward.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::NonPositive {
                context: format!(
                    "terminal reward at leaf `{}`",
                    Prefix::from_index(t_max, i, b)
                ),
                reason: format!("value is {v}"),
            });
        }
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); t_max + 1];
    values[t_max] = terminal_reward.to_vec();
    for t in (0..t_max).rev() {
        let parents = level_size(b, t)?;
        let mut level = vec![0.0; parents];
        for (p, vp) in level.iter_mut().enumerate() {
            let row = reference.row(t, p);
            let mut acc = crate::numeric::RunningSum::new();
            for (k, &c) in row.iter().enumerate() {
                acc.add(c * values[t + 1][p * b + k]);
            }
            *vp = acc.value();
        }
        values[t] = level;
    }
    let root = values[0][0];
    if !root.is_finite() || root <= 0.0 {
        return Err(Error::NonPositive {
            context: "root value of the optimal twist".into(),
            reason: format!("value is {root}"),
        });
    }
    for level in values.iter_mut() {
        for v in level.iter_mut() {
            *v /= root;
        }
    }
    values[0][0] = 1.0;
    TwistModel::new(b, values)
}

/// Multiplies every interior twist value (levels `1..T`) by an independent
/// factor `exp(U)` with `U` uniform on `[-ln(1+gamma), ln(1+gamma)]`. The
/// root and the terminal level are left untouched, so the tilted target is
/// unchanged and only the guidance quality degrades. Deterministic in
/// `seed`; `gamma = 0` returns the twist unchanged.
pub fn perturb_twist(twist: &TwistModel, gamma: f64, seed: u64) -> Result<TwistModel> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid_argument(
            "gamma",
            "must be finite and nonnegative",
            gamma,
        ));
    }
    if gamma == 0.0 {
        return Ok(twist.clone());
    }
    let a = (1.0 + gamma).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Vec<f64>> = twist
        .values_at(0)
        .iter()
        .copied()
        .map(|v| vec![v])
        .collect();
    values.truncate(1);
    for t in 1..=twist.horizon() {
        let mut level = twist.values_at(t).to_vec();
        if t < twist.horizon() {
            for v in level.iter_mut() {
                let u: f64 = rng.random_range(-a..=a);
                *v *= u.exp();
            }
        }
        values.push(level);
    }
    TwistModel::new(twist.b(), values)
}

/// Knobs for [`random_instance`].
#[derive(Clone, Debug)]
pub struct RandomInstanceParams {
    pub id: String,
    pub b: usize,
    pub horizon: usize,
    /// Shape parameter of the Gamma draws whose normalization gives each
    /// conditional row; larger values give flatter rows.
    pub concentration: f64,
    /// Terminal rewards are `exp(U)` with `U` uniform on this half-range.
    pub reward_log_range: f64,
    /// Relative perturbation applied to the interior levels of the optimal
    /// twist; 0 keeps the twist exactly optimal.
    pub twist_perturbation: f64,
}

impl Default for RandomInstanceParams {
    fn default() -> Self {
        RandomInstanceParams {
            id: "random".into(),
            b: 3,
            horizon: 4,
            concentration: 2.0,
            reward_log_range: 1.0,
            twist_perturbation: 0.0,
        }
    }
}

/// Draws a random instance: Gamma-normalized conditional rows, log-uniform
/// terminal rewards, and the (optionally perturbed) optimal twist of that
/// reward. Deterministic in `seed`.
pub fn random_instance(params: &RandomInstanceParams, seed: u64) -> Result<Instance> {
    let alphabet = Alphabet::new(params.b)?;
    if params.horizon < 1 {
        return Err(Error::invalid_argument(
            "horizon",
            "must be at least 1",
            params.horizon,
        ));
    }
    if !params.concentration.is_finite() || params.concentration <= 0.0 {
        return Err(Error::invalid_argument(
            "concentration",
            "must be positive",
            params.concentration,
        ));
    }
    if !params.reward_log_range.is_finite() || params.reward_log_range < 0.0 {
        return Err(Error::invalid_argument(
            "reward_log_range",
            "must be finite and nonnegative",
            params.reward_log_range,
        ));
    }
    let b = params.b;
    let t_max = params.horizon;
    level_size(b, t_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(params.concentration, 1.0).map_err(|_| {
        Error::invalid_argument("concentration", "rejected by Gamma", params.concentration)
    })?;
    let mut rows = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let parents = level_size(b, t)?;
        let mut level = vec![0.0; parents * b];
        for p in 0..parents {
            let row = &mut level[p * b..(p + 1) * b];
            loop {
                for v in row.iter_mut() {
                    *v = gamma.sample(&mut rng);
                }
                let s = neumaier_sum(row);
                if s > 0.0 && row.iter().all(|v| v.is_finite()) {
                    for v in row.iter_mut() {
                        *v /= s;
                    }
                    break;
                }
            }
        }
        rows.push(level);
    }
    let reference = ReferenceModel::new(alphabet, t_max, rows)?;
    let leaves = level_size(b, t_max)?;
    let s = params.reward_log_range;
    let reward: Vec<f64> = (0..leaves)
        .map(|_| {
            if s == 0.0 {
                1.0
            } else {
                rng.random_range(-s..=s).exp()
            }
        })
        .collect();
    let twist = optimal_twist(&reference, &reward)?;
    let twist = if params.twist_perturbation > 0.0 {
        let perturb_seed: u64 = rng.random();
        perturb_twist(&twist, params.twist_perturbation, perturb_seed)?
    } else {
        twist
    };
    Instance::new(params.id.clone(), reference, twist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_instance() -> Instance {
        let alphabet = Alphabet::new(2).unwrap();
        let reference = ReferenceModel::new(
            alphabet,
            2,
            vec![vec![0.25, 0.75], vec![0.5, 0.5, 0.1, 0.9]],
        )
        .unwrap();
        let twist = TwistModel::new(
            2,
            vec![vec![1.0], vec![0.8, 1.2], vec![0.5, 1.5, 2.0, 0.25]],
        )
        .unwrap();
        Instance::new("small", reference, twist).unwrap()
    }

    #[test]
    fn prefix_index_roundtrip() {
        let b = 3;
        for level in 0..4 {
            let n = level_size(b, level).unwrap();
            for idx in 0..n {
                let p = Prefix::from_index(level, idx, b);
                assert_eq!(p.len(), level);
                assert_eq!(p.index(b), idx);
                let s = p.to_string();
                let back: Prefix = s.parse().unwrap();
                assert_eq!(back, p);
            }
        }
    }

    #[test]
    fn prefix_display_uses_dash_for_root() {
        assert_eq!(Prefix::root().to_string(), "-");
        assert_eq!(Prefix::new(vec![0, 2, 1]).to_string(), "0.2.1");
    }

    #[test]
    fn prefix_order_is_preorder() {
        let root = Prefix::root();
        let a = Prefix::new(vec![0]);
        let ab = Prefix::new(vec![0, 1]);
        let b = Prefix::new(vec![1]);
        assert!(root < a);
        assert!(a < ab);
        assert!(ab < b);
    }

    #[test]
    fn alphabet_rejects_singletons() {
        assert!(Alphabet::new(1).is_err());
        assert!(Alphabet::new(2).is_ok());
    }

    #[test]
    fn reference_rejects_bad_rows() {
        let alphabet = Alphabet::new(2).unwrap();
        let bad_sum = ReferenceModel::new(alphabet, 1, vec![vec![0.6, 0.6]]);
        assert!(matches!(bad_sum, Err(Error::InvalidProbabilities { .. })));
        let negative = ReferenceModel::new(alphabet, 1, vec![vec![-0.1, 1.1]]);
        assert!(matches!(negative, Err(Error::InvalidProbabilities { .. })));
        let wrong_len = ReferenceModel::new(alphabet, 1, vec![vec![1.0]]);
        assert!(matches!(wrong_len, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn twist_rejects_nonpositive_values() {
        let bad = TwistModel::new(2, vec![vec![1.0], vec![0.0, 1.0]]);
        assert!(matches!(bad, Err(Error::NonPositive { .. })));
        let bad_root = TwistModel::new(2, vec![vec![2.0], vec![1.0, 1.0]]);
        assert!(bad_root.is_err());
    }

    #[test]
    fn row_renormalization_reaches_fixpoint() {
        let mut row = vec![0.1, 0.2, 0.3, 0.4000000001];
        renormalize_row_fixpoint(&mut row);
        let snapshot = row.clone();
        renormalize_row_fixpoint(&mut row);
        assert_eq!(row, snapshot);
    }

    #[test]
    fn step_normalizers_match_direct_sums() {
        let inst = small_instance();
        let z = inst.step_normalizers();
        assert_eq!(z.len(), 2);
        assert!((z[0][0] - (0.25 * 0.8 + 0.75 * 1.2)).abs() < 1e-15);
        assert!((z[1][0] - (0.5 * 0.5 + 0.5 * 1.5)).abs() < 1e-15);
        assert!((z[1][1] - (0.1 * 2.0 + 0.9 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn tilted_rows_are_normalized_and_proportional() {
        let inst = small_instance();
        let rows = inst.stepwise_tilted_rows();
        for level in &rows {
            let b = inst.b();
            for p in 0..level.len() / b {
                let row = &level[p * b..(p + 1) * b];
                assert!((neumaier_sum(row) - 1.0).abs() < 1e-12);
            }
        }
        // Tilt of the root row by hand.
        let z = 0.25 * 0.8 + 0.75 * 1.2;
        assert!((rows[0][0] - 0.25 * 0.8 / z).abs() < 1e-15);
        assert!((rows[0][1] - 0.75 * 1.2 / z).abs() < 1e-15);
    }

    #[test]
    fn serialize_parse_is_identity() {
        let inst = small_instance();
        let text = inst.to_text();
        let back = Instance::parse(&text).unwrap();
        assert_eq!(back, inst);
        // And stable under a second round trip.
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_accepts_shuffled_records() {
        let inst = small_instance();
        let text = inst.to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        // Keep the three header lines, reverse the records.
        let records = lines.split_off(3);
        let mut records: Vec<&str> = records.into_iter().rev().collect();
        lines.append(&mut records);
        let back = Instance::parse(&lines.join("\n")).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn parse_reports_missing_and_duplicate_records() {
        let inst = small_instance();
        let text = inst.to_text();
        let lines: Vec<&str> = text.lines().collect();
        let missing = lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 4)
            .map(|(_, l)| *l)
            .collect::<Vec<_>>()
            .join("\n");
        match Instance::parse(&missing) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("missing record")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut dup = lines.clone();
        dup.push(lines[4]);
        match Instance::parse(&dup.join("\n")) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("duplicate")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn optimal_twist_matches_small_example() {
        // Two symbols, one step: rewards (2, 4) under the uniform row have
        // mean 3, so the rescaled twist is (1; 2/3, 4/3).
        let alphabet = Alphabet::new(2).unwrap();
        let reference = ReferenceModel::new(alphabet, 1, vec![vec![0.5, 0.5]]).unwrap();
        let twist = optimal_twist(&reference, &[2.0, 4.0]).unwrap();
        assert_eq!(twist.value(0, 0), 1.0);
        assert!((twist.value(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((twist.value(1, 1) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn optimal_twist_of_constant_reward_is_constant() {
        let inst = small_instance();
        let leaves = level_size(inst.b(), inst.horizon()).unwrap();
        let twist = optimal_twist(inst.reference(), &vec![1.0; leaves]).unwrap();
        for t in 0..=inst.horizon() {
            for &v in twist.values_at(t) {
                assert!((v - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn optimal_twist_satisfies_backward_recursion() {
        let params = RandomInstanceParams {
            id: "rec".into(),
            b: 3,
            horizon: 3,
            ..Default::default()
        };
        let inst = random_instance(&params, 11).unwrap();
        let z = inst.step_normalizers();
        for t in 0..inst.horizon() {
            for (p, &zp) in z[t].iter().enumerate() {
                let v = inst.twist().value(t, p);
                assert!(
                    (zp - v).abs() <= 1e-12 * v,
                    "recursion residual at level {t}, prefix {p}: z={zp}, v={v}"
                );
            }
        }
    }

    #[test]
    fn perturb_twist_touches_only_interior_levels() {
        let inst = small_instance();
        let perturbed = perturb_twist(inst.twist(), 0.3, 7).unwrap();
        assert_eq!(perturbed.value(0, 0), 1.0);
        assert_eq!(perturbed.values_at(2), inst.twist().values_at(2));
        let a = 1.3f64.ln();
        for p in 0..2 {
            let ratio = perturbed.value(1, p) / inst.twist().value(1, p);
            assert!(ratio.ln().abs() <= a + 1e-12);
            assert!(ratio != 1.0);
        }
    }

    #[test]
    fn perturb_twist_zero_gamma_is_identity() {
        let inst = small_instance();
        let same = perturb_twist(inst.twist(), 0.0, 3).unwrap();
        assert_eq!(&same, inst.twist());
    }

    #[test]
    fn perturb_twist_is_deterministic_in_seed() {
        let inst = small_instance();
        let a = perturb_twist(inst.twist(), 0.2, 9).unwrap();
        let b = perturb_twist(inst.twist(), 0.2, 9).unwrap();
        let c = perturb_twist(inst.twist(), 0.2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_instance_is_deterministic_and_valid() {
        let params = RandomInstanceParams::default();
        let a = random_instance(&params, 5).unwrap();
        let b = random_instance(&params, 5).unwrap();
        let c = random_instance(&params, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.b(), 3);
        assert_eq!(a.horizon(), 4);
        let text = a.to_text();
        assert_eq!(Instance::parse(&text).unwrap(), a);
    }

    #[test]
    fn level_size_enforces_leaf_cap() {
        assert!(level_size(2, 20).is_ok());
        assert!(level_size(2, 21).is_err());
        assert!(level_size(1024, 2).is_ok());
        assert!(level_size(1024, 3).is_err());
    }
}
