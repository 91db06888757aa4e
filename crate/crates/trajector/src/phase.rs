//! Phase-space trajectory machinery: first-frame-relative trajectories,
//! time-delay embedding, recurrence plots under the L1 norm, recurrence
//! network adjacency, and PGM export.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

pub const DEFAULT_TAU: usize = 1;
pub const DEFAULT_EMBED_DIM: usize = 3;
pub const DEFAULT_REC_RATE: f64 = 0.1;

/// Delay-embedded trajectory: M states of dimension m·d.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedTrajectory {
    pub states: DMatrix<f64>,
    pub tau: usize,
    pub m: usize,
}

/// N×N binary recurrence matrix with its threshold. Distances are L1.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrencePlot {
    n: usize,
    data: Vec<bool>,
    pub epsilon: f64,
}

impl RecurrencePlot {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    /// Fraction of recurrent off-diagonal pairs.
    pub fn recurrence_rate(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut count = 0usize;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.at(i, j) {
                    count += 1;
                }
            }
        }
        count as f64 / (self.n * (self.n - 1)) as f64
    }
}

/// Row t of the output is row t minus row 0; row 0 becomes zero.
pub fn relative_trajectory(seq: &FeatureSequence) -> Result<FeatureSequence> {
    let t = seq.values.nrows();
    if t < 2 {
        return Err(Error::TrackTooShort(t));
    }
    let first = seq.values.row(0).clone_owned();
    let mut values = seq.values.clone();
    for r in 0..t {
        for c in 0..values.ncols() {
            values[(r, c)] -= first[c];
        }
    }
    Ok(FeatureSequence {
        values,
        ..seq.clone()
    })
}

/// State i is the concatenation of rows i, i+tau, ..., i+(m-1)tau.
pub fn delay_embed(seq: &FeatureSequence, tau: usize, m: usize) -> Result<EmbeddedTrajectory> {
    if tau < 1 || m < 1 {
        return Err(Error::invalid("tau and m must be at least 1"));
    }
    let t = seq.values.nrows();
    let d = seq.values.ncols();
    let span = (m - 1) * tau;
    if t < span + 1 {
        return Err(Error::invalid(format!(
            "sequence of {t} rows too short for m={m}, tau={tau}"
        )));
    }
    let rows = t - span;
    let states = DMatrix::from_fn(rows, m * d, |i, j| {
        let block = j / d;
        let col = j % d;
        seq.values[(i + block * tau, col)]
    });
    Ok(EmbeddedTrajectory { states, tau, m })
}

fn l1_distance(states: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..states.ncols())
        .map(|c| (states[(i, c)] - states[(j, c)]).abs())
        .sum()
}

/// R[i,j] = 1 iff the L1 distance between states i and j is at most epsilon
/// (the Heaviside boundary counts as recurrent).
pub fn recurrence_plot(traj: &EmbeddedTrajectory, epsilon: f64) -> Result<RecurrencePlot> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be a non-negative finite number"));
    }
    let n = traj.states.nrows();
    let mut data = vec![false; n * n];
    for i in 0..n {
        data[i * n + i] = true;
        for j in i + 1..n {
            let hit = l1_distance(&traj.states, i, j) <= epsilon;
            data[i * n + j] = hit;
            data[j * n + i] = hit;
        }
    }
    Ok(RecurrencePlot {
        n,
        data,
        epsilon,
    })
}

/// Smallest pairwise-distance quantile whose recurrence rate reaches
/// `target_rate`; exact by sorting all M(M-1)/2 distances.
pub fn epsilon_for_rate(traj: &EmbeddedTrajectory, target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return Err(Error::invalid("target_rate must be in (0, 1]"));
    }
    let n = traj.states.nrows();
    if n < 2 {
        return Err(Error::invalid("need at least 2 states"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(l1_distance(&traj.states, i, j));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let pairs = dists.len();
    let k = ((target_rate * pairs as f64).ceil() as usize).clamp(1, pairs);
    Ok(dists[k - 1])
}

/// Adjacency of the recurrence network: the plot with self-loops removed.
pub fn rp_to_adjacency(rp: &RecurrencePlot) -> DMatrix<u8> {
    DMatrix::from_fn(rp.n, rp.n, |i, j| {
        if i != j && rp.at(i, j) {
            1
        } else {
            0
        }
    })
}

/// Optional model-input variant: append each state's recurrence density
/// (fraction of other states it recurs with) as one extra column.
pub fn append_recurrence_density(
    traj: &EmbeddedTrajectory,
    rp: &RecurrencePlot,
) -> Result<EmbeddedTrajectory> {
    let n = traj.states.nrows();
    if rp.n != n {
        return Err(Error::ShapeMismatch(format!(
            "plot of size {} for a trajectory of {n} states",
            rp.n
        )));
    }
    let d = traj.states.ncols();
    let states = DMatrix::from_fn(n, d + 1, |i, j| {
        if j < d {
            traj.states[(i, j)]
        } else if n > 1 {
            let count = (0..n).filter(|&k| k != i && rp.at(i, k)).count();
            count as f64 / (n - 1) as f64
        } else {
            0.0
        }
    });
    Ok(EmbeddedTrajectory {
        states,
        tau: traj.tau,
        m: traj.m,
    })
}

/// Binary PGM (P5): recurrent points black (0), others white (255).
pub fn export_rp_image(rp: &RecurrencePlot, path: &Path) -> Result<()> {
    crate::par::write_atomic(path, &rp_to_pgm(rp))?;
    Ok(())
}

pub fn rp_to_pgm(rp: &RecurrencePlot) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", rp.n, rp.n).into_bytes();
    out.extend(rp.data.iter().map(|&bit| if bit { 0u8 } else { 255u8 }));
    out
}

/// Dump the 0/1 matrix as CSV for debugging.
pub fn rp_to_csv(rp: &RecurrencePlot) -> Vec<u8> {
    let mut out = String::new();
    for i in 0..rp.n {
        for j in 0..rp.n {
            if j > 0 {
                out.push(',');
            }
            out.push(if rp.at(i, j) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out.into_bytes()
}
