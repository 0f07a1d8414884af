//! Transition datasets.
//!
//! A [`TransitionDataset`] holds `n` pairs `(x, x')` of `d`-dimensional points
//! with optional per-row rewards. Storage is flat and row-major, so the x and
//! x' columns can be handed to models without copying. Datasets are immutable
//! after construction.
//!
//! Finite-state chains store each integer state as a 1-d point; the tabular
//! layer casts back with an exactness check.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore};

use crate::{Error, Result};

/// A point in the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn scalar(value: f64) -> Self {
        Point(vec![value])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point(coords)
    }
}

impl From<f64> for Point {
    fn from(value: f64) -> Self {
        Point(vec![value])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    dim: usize,
    xs: Vec<f64>,
    xps: Vec<f64>,
    rewards: Option<Vec<f64>>,
}

impl TransitionDataset {
    /// Builds a dataset from parallel lists of current and next points.
    ///
    /// Errors name the offending row: empty input, inconsistent dimension,
    /// non-finite coordinates or rewards.
    pub fn from_pairs(xs: &[Point], xps: &[Point], rewards: Option<Vec<f64>>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Empty);
        }
        if xs.len() != xps.len() {
            return Err(Error::LengthMismatch {
                what: "next points",
                expected: xs.len(),
                found: xps.len(),
            });
        }
        let dim = xs[0].dim();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: 1,
                found: 0,
            });
        }
        let mut flat_x = Vec::with_capacity(xs.len() * dim);
        let mut flat_xp = Vec::with_capacity(xs.len() * dim);
        for (row, (x, xp)) in xs.iter().zip(xps).enumerate() {
            for found in [x.dim(), xp.dim()] {
                if found != dim {
                    return Err(Error::DimensionMismatch {
                        row,
                        expected: dim,
                        found,
                    });
                }
            }
            flat_x.extend_from_slice(x.coords());
            flat_xp.extend_from_slice(xp.coords());
        }
        Self::from_flat(dim, flat_x, flat_xp, rewards)
    }

    /// Builds a dataset from row-major flat buffers of length `n * dim`.
    pub fn from_flat(
        dim: usize,
        xs: Vec<f64>,
        xps: Vec<f64>,
        rewards: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if xs.is_empty() {
            return Err(Error::Empty);
        }
        if xs.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                row: xs.len() / dim,
                expected: dim,
                found: xs.len() % dim,
            });
        }
        if xps.len() != xs.len() {
            return Err(Error::LengthMismatch {
                what: "next points",
                expected: xs.len(),
                found: xps.len(),
            });
        }
        let n = xs.len() / dim;
        for (row, (x, xp)) in xs.chunks_exact(dim).zip(xps.chunks_exact(dim)).enumerate() {
            if x.iter().chain(xp).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row });
            }
        }
        if let Some(r) = &rewards {
            if r.len() != n {
                return Err(Error::LengthMismatch {
                    what: "rewards",
                    expected: n,
                    found: r.len(),
                });
            }
            if let Some(row) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row });
            }
        }
        Ok(TransitionDataset {
            dim,
            xs,
            xps,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, row: usize) -> &[f64] {
        &self.xs[row * self.dim..(row + 1) * self.dim]
    }

    pub fn xp(&self, row: usize) -> &[f64] {
        &self.xps[row * self.dim..(row + 1) * self.dim]
    }

    pub fn reward(&self, row: usize) -> Option<f64> {
        self.rewards.as_ref().map(|r| r[row])
    }

    /// The x column, row-major.
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// The x' column, row-major.
    pub fn xps(&self) -> &[f64] {
        &self.xps
    }

    pub fn rewards(&self) -> Option<&[f64]> {
        self.rewards.as_deref()
    }

    pub fn has_rewards(&self) -> bool {
        self.rewards.is_some()
    }

    /// Draws `size` rows uniformly with replacement.
    ///
    /// # Panics
    ///
    /// If `size` is zero.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Minibatch {
        assert!(size >= 1, "minibatch size must be at least 1");
        let n = self.len();
        let indices: Vec<usize> = (0..size).map(|_| rng.random_range(0..n)).collect();
        self.gather(indices)
    }

    /// Every row once, in dataset order.
    pub fn full_batch(&self) -> Minibatch {
        Minibatch {
            dim: self.dim,
            indices: (0..self.len()).collect(),
            xs: self.xs.clone(),
            xps: self.xps.clone(),
            rewards: self.rewards.clone(),
        }
    }

    fn gather(&self, indices: Vec<usize>) -> Minibatch {
        let d = self.dim;
        let mut xs = Vec::with_capacity(indices.len() * d);
        let mut xps = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            xs.extend_from_slice(self.x(i));
            xps.extend_from_slice(self.xp(i));
        }
        let rewards = self
            .rewards
            .as_ref()
            .map(|r| indices.iter().map(|&i| r[i]).collect());
        Minibatch {
            dim: d,
            indices,
            xs,
            xps,
            rewards,
        }
    }

    /// Replaces the action part of every next point with an action drawn from
    /// `policy` at the next state.
    ///
    /// The first `state_dims` coordinates of each x' are the state; the
    /// remaining `dim - state_dims` are the action and get resampled. The x
    /// column and rewards are untouched.
    pub fn compose_with_policy<P, R>(
        &self,
        state_dims: usize,
        policy: &P,
        rng: &mut R,
    ) -> Result<TransitionDataset>
    where
        P: Policy + ?Sized,
        R: RngCore,
    {
        if state_dims > self.dim {
            return Err(Error::InvalidParameter(format!(
                "state split {state_dims} exceeds point dimension {}",
                self.dim
            )));
        }
        let action_dims = self.dim - state_dims;
        let mut xps = self.xps.clone();
        if action_dims > 0 {
            for (row, xp) in xps.chunks_exact_mut(self.dim).enumerate() {
                let action = policy.sample_action(&xp[..state_dims], rng);
                if action.len() != action_dims {
                    return Err(Error::DimensionMismatch {
                        row,
                        expected: action_dims,
                        found: action.len(),
                    });
                }
                xp[state_dims..].copy_from_slice(&action);
            }
        }
        Ok(TransitionDataset {
            dim: self.dim,
            xs: self.xs.clone(),
            xps,
            rewards: self.rewards.clone(),
        })
    }

    /// Maps multi-coordinate integer points onto a single mixed-radix state
    /// index, e.g. `(s, a)` with `shape = [S, A]` becomes `s * A + a`.
    pub fn encode_discrete(&self, shape: &[usize]) -> Result<TransitionDataset> {
        if shape.len() != self.dim {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: self.dim,
                found: shape.len(),
            });
        }
        let mut xs = Vec::with_capacity(self.len());
        let mut xps = Vec::with_capacity(self.len());
        for row in 0..self.len() {
            xs.push(encode_index(self.x(row), shape, row)? as f64);
            xps.push(encode_index(self.xp(row), shape, row)? as f64);
        }
        Ok(TransitionDataset {
            dim: 1,
            xs,
            xps,
            rewards: self.rewards.clone(),
        })
    }

    /// Writes the dataset as CSV: a `d,n,has_rewards` header line followed by
    /// rows `x_1..x_d, xp_1..xp_d[, r]`.
    ///
    /// Values are written in shortest round-trip form, so loading restores
    /// bit-identical doubles.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record([
            self.dim.to_string(),
            self.len().to_string(),
            u8::from(self.has_rewards()).to_string(),
        ])?;
        let mut record = Vec::with_capacity(2 * self.dim + 1);
        for row in 0..self.len() {
            record.clear();
            record.extend(self.x(row).iter().map(|v| format!("{v:?}")));
            record.extend(self.xp(row).iter().map(|v| format!("{v:?}")));
            if let Some(r) = self.reward(row) {
                record.push(format!("{r:?}"));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<TransitionDataset> {
        let file = File::open(path)?;
        Self::read_csv(BufReader::new(file))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<TransitionDataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        if header.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                message: format!("header needs 3 fields (d,n,has_rewards), found {}", header.len()),
            });
        }
        let parse_count = |s: &str, name: &str| -> Result<usize> {
            s.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: 1,
                message: format!("invalid {name} `{s}`"),
            })
        };
        let dim = parse_count(&header[0], "d")?;
        let n = parse_count(&header[1], "n")?;
        let has_rewards = match header[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("invalid has_rewards `{other}`"),
                })
            }
        };
        if dim == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "d must be at least 1".into(),
            });
        }
        let arity = 2 * dim + usize::from(has_rewards);
        let mut xs = Vec::with_capacity(n * dim);
        let mut xps = Vec::with_capacity(n * dim);
        let mut rewards = has_rewards.then(|| Vec::with_capacity(n));
        let mut rows = 0usize;
        for (k, rec) in records.enumerate() {
            let line = k + 2;
            let rec = rec?;
            if rec.len() != arity {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {arity} fields, found {}", rec.len()),
                });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number `{field}`"),
                })?;
                if j < dim {
                    xs.push(v);
                } else if j < 2 * dim {
                    xps.push(v);
                } else if let Some(r) = rewards.as_mut() {
                    r.push(v);
                }
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: rows + 2,
                message: format!("header declares {n} rows, found {rows}"),
            });
        }
        Self::from_flat(dim, xs, xps, rewards)
    }
}

fn encode_index(coords: &[f64], shape: &[usize], row: usize) -> Result<usize> {
    let mut index = 0usize;
    for (&v, &size) in coords.iter().zip(shape) {
        if v.fract() != 0.0 || v < 0.0 || v >= size as f64 {
            return Err(Error::InvalidState {
                row,
                value: v,
                states: size,
            });
        }
        index = index * size + v as usize;
    }
    Ok(index)
}

/// A resolved minibatch: row indices plus gathered copies of the rows.
#[derive(Debug, Clone)]
pub struct Minibatch {
    dim: usize,
    indices: Vec<usize>,
    xs: Vec<f64>,
    xps: Vec<f64>,
    rewards: Option<Vec<f64>>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn xps(&self) -> &[f64] {
        &self.xps
    }

    pub fn rewards(&self) -> Option<&[f64]> {
        self.rewards.as_deref()
    }
}

/// A stochastic map from states to actions.
pub trait Policy {
    fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

/// A policy over integer states and integer actions given as a probability
/// table `probs[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty);
        }
        let actions = probs[0].len();
        for (row, p) in probs.iter().enumerate() {
            if p.len() != actions {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: actions,
                    found: p.len(),
                });
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "policy row {row} is not a probability vector"
                )));
            }
        }
        Ok(TabularPolicy { probs })
    }

    /// The policy that always picks `action`.
    pub fn deterministic(states: usize, actions: usize, action: usize) -> Self {
        let mut row = vec![0.0; actions];
        row[action] = 1.0;
        TabularPolicy {
            probs: vec![row; states],
        }
    }

    pub fn states(&self) -> usize {
        self.probs.len()
    }

    pub fn actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.probs[state];
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding left u above the cumulative sum; take the last action with mass.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Policy for TabularPolicy {
    fn sample_action(&self, state: &[f64], mut rng: &mut dyn RngCore) -> Vec<f64> {
        let s = state[0] as usize;
        vec![self.sample_index(s, &mut rng) as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn pts(v: &[f64]) -> Vec<Point> {
        v.iter().map(|&x| Point::scalar(x)).collect()
    }

    #[test]
    fn minimal_dataset() {
        let ds = TransitionDataset::from_pairs(&pts(&[0.0]), &pts(&[1.0]), None).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 1);
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let xs = vec![
            Point::new(vec![0.0, 1.0]),
            Point::new(vec![0.0, 1.0, 2.0]),
        ];
        let xps = vec![Point::new(vec![0.0, 1.0]), Point::new(vec![0.0, 1.0])];
        match TransitionDataset::from_pairs(&xs, &xps, None) {
            Err(Error::DimensionMismatch { row, expected, found }) => {
                assert_eq!((row, expected, found), (1, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(
            TransitionDataset::from_pairs(&[], &[], None),
            Err(Error::Empty)
        ));
        let err = TransitionDataset::from_pairs(&pts(&[0.0, 1.0]), &pts(&[1.0, f64::NAN]), None);
        assert!(matches!(err, Err(Error::NonFinite { row: 1 })));
        let err =
            TransitionDataset::from_pairs(&pts(&[0.0]), &pts(&[1.0]), Some(vec![f64::INFINITY]));
        assert!(matches!(err, Err(Error::NonFinite { row: 0 })));
        let err = TransitionDataset::from_pairs(&pts(&[0.0]), &pts(&[1.0]), Some(vec![]));
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn minibatch_is_seeded() {
        let ds = TransitionDataset::from_pairs(
            &pts(&[0.0, 1.0, 2.0, 3.0, 4.0]),
            &pts(&[1.0, 2.0, 3.0, 4.0, 0.0]),
            None,
        )
        .unwrap();
        let a = ds.sample_minibatch(5, &mut seeded_rng(9));
        let b = ds.sample_minibatch(5, &mut seeded_rng(9));
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn single_row_minibatch_repeats_row() {
        let ds = TransitionDataset::from_pairs(&pts(&[3.0]), &pts(&[4.0]), Some(vec![2.0])).unwrap();
        let mb = ds.sample_minibatch(4, &mut seeded_rng(1));
        assert_eq!(mb.indices(), &[0, 0, 0, 0]);
        assert_eq!(mb.xs(), &[3.0; 4]);
        assert_eq!(mb.rewards().unwrap(), &[2.0; 4]);
    }

    #[test]
    fn deterministic_policy_composition() {
        let xs = vec![Point::new(vec![0.0, 1.0]), Point::new(vec![1.0, 1.0])];
        let xps = vec![Point::new(vec![1.0, 1.0]), Point::new(vec![2.0, 1.0])];
        let ds = TransitionDataset::from_pairs(&xs, &xps, Some(vec![0.5, -1.0])).unwrap();
        let pi = TabularPolicy::deterministic(3, 2, 0);
        let out = ds.compose_with_policy(1, &pi, &mut seeded_rng(0)).unwrap();
        assert_eq!(out.xs(), ds.xs());
        assert_eq!(out.rewards(), ds.rewards());
        for row in 0..out.len() {
            assert_eq!(out.xp(row)[1], 0.0);
            assert_eq!(out.xp(row)[0], ds.xp(row)[0]);
        }
    }

    #[test]
    fn identity_split_leaves_dataset_unchanged() {
        let xs = vec![Point::new(vec![0.0, 1.0])];
        let xps = vec![Point::new(vec![1.0, 1.0])];
        let ds = TransitionDataset::from_pairs(&xs, &xps, None).unwrap();
        let pi = TabularPolicy::deterministic(3, 2, 0);
        let out = ds.compose_with_policy(2, &pi, &mut seeded_rng(0)).unwrap();
        assert_eq!(out, ds);
        assert!(ds.compose_with_policy(3, &pi, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let xs = vec![
            Point::new(vec![0.1, -1e-300]),
            Point::new(vec![std::f64::consts::PI, 1.0 / 3.0]),
        ];
        let xps = vec![
            Point::new(vec![1e300, 5e-324]),
            Point::new(vec![-0.0, 2.0_f64.sqrt()]),
        ];
        let ds = TransitionDataset::from_pairs(&xs, &xps, Some(vec![0.7, -1.25e-7])).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = TransitionDataset::read_csv(buf.as_slice()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.xs()), bits(ds.xs()));
        assert_eq!(bits(back.xps()), bits(ds.xps()));
        assert_eq!(bits(back.rewards().unwrap()), bits(ds.rewards().unwrap()));
    }

    #[test]
    fn csv_wrong_arity_reports_line() {
        let text = "1,2,0\n0,1\n1,2,3\n";
        match TransitionDataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_reward_is_an_error() {
        let text = "1,2,1\n0,1,0.5\n1,2\n";
        assert!(matches!(
            TransitionDataset::read_csv(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn csv_row_count_must_match_header() {
        let text = "1,3,0\n0,1\n1,2\n";
        assert!(matches!(
            TransitionDataset::read_csv(text.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn encode_discrete_uses_mixed_radix() {
        let xs = vec![Point::new(vec![2.0, 1.0])];
        let xps = vec![Point::new(vec![0.0, 3.0])];
        let ds = TransitionDataset::from_pairs(&xs, &xps, None).unwrap();
        let flat = ds.encode_discrete(&[3, 4]).unwrap();
        assert_eq!(flat.xs(), &[9.0]);
        assert_eq!(flat.xps(), &[3.0]);
        assert!(ds.encode_discrete(&[3, 3]).is_err());
    }
}
