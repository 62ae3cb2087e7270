//! Linear-chain CRF: log-partition, constrained marginals and Viterbi.
//!
//! A path `y` over `L` positions scores
//! `start[y_0] + Σ_t e[t, y_t] + Σ_t T[y_{t-1}, y_t] + stop[y_{L-1}]`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{log_sum_exp, Real};

/// Transition and boundary scores.
#[derive(Clone, Copy, Debug)]
pub struct Crf<'a, F> {
    pub transitions: &'a Matrix<F>,
    pub start: &'a [F],
    pub stop: &'a [F],
}

impl<'a, F: Real> Crf<'a, F> {
    pub fn new(transitions: &'a Matrix<F>, start: &'a [F], stop: &'a [F]) -> Self {
        Crf {
            transitions,
            start,
            stop,
        }
    }

    pub fn tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Matrix<F>) -> Result<()> {
        let k = self.tags();
        if emissions.rows() == 0 {
            return Err(Error::EmptySentence);
        }
        if emissions.cols() != k
            || self.stop.len() != k
            || self.transitions.rows() != k
            || self.transitions.cols() != k
        {
            return Err(Error::Shape(format!(
                "emissions {}x{}, transitions {}x{}, start {}, stop {}",
                emissions.rows(),
                emissions.cols(),
                self.transitions.rows(),
                self.transitions.cols(),
                k,
                self.stop.len()
            )));
        }
        Ok(())
    }

    /// Unnormalized score of one path.
    pub fn path_score(&self, emissions: &Matrix<F>, path: &[usize]) -> F {
        let mut s = self.start[path[0]] + self.stop[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += emissions.get(t, y);
            if t > 0 {
                s += self.transitions.get(path[t - 1], y);
            }
        }
        s
    }

    /// `log Z` by the forward algorithm.
    pub fn log_partition(&self, emissions: &Matrix<F>) -> Result<F> {
        self.check(emissions)?;
        Ok(self.forward(emissions, None).1)
    }

    /// Forward table in log space. `clamp[t] = Some(y)` restricts position
    /// `t` to tag `y`.
    fn forward(&self, e: &Matrix<F>, clamp: Option<&[Option<usize>]>) -> (Matrix<F>, F) {
        let (len, k) = (e.rows(), e.cols());
        let allowed = |t: usize, y: usize| clamp.map_or(true, |c| c[t].map_or(true, |g| g == y));
        let mut alpha = Matrix::zeros(len, k);
        for y in 0..k {
            let v = if allowed(0, y) { self.start[y] + e.get(0, y) } else { F::neg_infinity() };
            alpha.set(0, y, v);
        }
        let mut buf = vec![F::zero(); k];
        for t in 1..len {
            for y in 0..k {
                if !allowed(t, y) {
                    alpha.set(t, y, F::neg_infinity());
                    continue;
                }
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = alpha.get(t - 1, j) + self.transitions.get(j, y);
                }
                alpha.set(t, y, e.get(t, y) + log_sum_exp(&buf));
            }
        }
        for (y, b) in buf.iter_mut().enumerate() {
            *b = alpha.get(len - 1, y) + self.stop[y];
        }
        let log_z = log_sum_exp(&buf);
        (alpha, log_z)
    }

    fn backward(&self, e: &Matrix<F>, clamp: Option<&[Option<usize>]>) -> Matrix<F> {
        let (len, k) = (e.rows(), e.cols());
        let allowed = |t: usize, y: usize| clamp.map_or(true, |c| c[t].map_or(true, |g| g == y));
        let mut beta = Matrix::zeros(len, k);
        for y in 0..k {
            beta.set(len - 1, y, self.stop[y]);
        }
        let mut buf = vec![F::zero(); k];
        for t in (0..len - 1).rev() {
            for j in 0..k {
                for (y, b) in buf.iter_mut().enumerate() {
                    *b = if allowed(t + 1, y) {
                        self.transitions.get(j, y) + e.get(t + 1, y) + beta.get(t + 1, y)
                    } else {
                        F::neg_infinity()
                    };
                }
                beta.set(t, j, log_sum_exp(&buf));
            }
        }
        beta
    }

    /// Posterior marginals and `log Z`, optionally constrained.
    pub fn marginals(&self, emissions: &Matrix<F>, clamp: Option<&[Option<usize>]>) -> Result<Marginals<F>> {
        self.check(emissions)?;
        if let Some(c) = clamp {
            if c.len() != emissions.rows() {
                return Err(Error::Shape("clamp length".into()));
            }
        }
        let (len, k) = (emissions.rows(), emissions.cols());
        let (alpha, log_z) = self.forward(emissions, clamp);
        let beta = self.backward(emissions, clamp);
        let mut unary = Matrix::zeros(len, k);
        for t in 0..len {
            for y in 0..k {
                unary.set(t, y, (alpha.get(t, y) + beta.get(t, y) - log_z).exp());
            }
        }
        let mut pair = Matrix::zeros(k, k);
        for t in 1..len {
            for j in 0..k {
                let a = alpha.get(t - 1, j);
                if a == F::neg_infinity() {
                    continue;
                }
                for y in 0..k {
                    if alpha.get(t, y) == F::neg_infinity() {
                        continue;
                    }
                    let v = a + self.transitions.get(j, y) + emissions.get(t, y) + beta.get(t, y) - log_z;
                    let cur = pair.get(j, y);
                    pair.set(j, y, cur + v.exp());
                }
            }
        }
        Ok(Marginals { log_z, unary, pair })
    }

    /// Highest-scoring path; ties go to the lower tag index.
    pub fn viterbi(&self, emissions: &Matrix<F>) -> Result<Vec<usize>> {
        self.check(emissions)?;
        let (len, k) = (emissions.rows(), emissions.cols());
        let mut delta: Vec<F> = (0..k).map(|y| self.start[y] + emissions.get(0, y)).collect();
        let mut back = vec![0usize; len * k];
        let mut next = vec![F::zero(); k];
        for t in 1..len {
            for y in 0..k {
                let mut best = 0;
                let mut best_v = delta[0] + self.transitions.get(0, y);
                for (j, &d) in delta.iter().enumerate().skip(1) {
                    let v = d + self.transitions.get(j, y);
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                back[t * k + y] = best;
                next[y] = best_v + emissions.get(t, y);
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut last = 0;
        let mut last_v = delta[0] + self.stop[0];
        for (y, &d) in delta.iter().enumerate().skip(1) {
            let v = d + self.stop[y];
            if v > last_v {
                last_v = v;
                last = y;
            }
        }
        let mut path = vec![0; len];
        path[len - 1] = last;
        for t in (1..len).rev() {
            path[t - 1] = back[t * k + path[t]];
        }
        Ok(path)
    }
}

/// Output of [`Crf::marginals`].
#[derive(Clone, Debug)]
pub struct Marginals<F> {
    pub log_z: F,
    /// `P(y_t = k)`, `L × K`.
    pub unary: Matrix<F>,
    /// `Σ_t P(y_{t-1} = j, y_t = k)`, `K × K`.
    pub pair: Matrix<F>,
}

/// Emissions with masked positions replaced by zeros.
pub fn masked_emissions<F: Real>(emissions: &Matrix<F>, mask: &[bool]) -> Matrix<F> {
    let mut e = emissions.clone();
    for (t, &keep) in mask.iter().enumerate() {
        if !keep {
            e.row_mut(t).iter_mut().for_each(|x| *x = F::zero());
        }
    }
    e
}

/// Negative log-likelihood of the gold tags.
///
/// Masked positions contribute no emission and their tag is summed out, so
/// the numerator is the log-sum over all paths agreeing with `gold` on the
/// unmasked positions.
pub fn crf_log_likelihood<F: Real>(
    emissions: &Matrix<F>,
    transitions: &Matrix<F>,
    start: &[F],
    stop: &[F],
    gold: &[usize],
    mask: &[bool],
) -> Result<F> {
    Ok(crf_nll_and_gradient(emissions, transitions, start, stop, gold, mask, false)?.0)
}

/// Gradient of the CRF negative log-likelihood.
#[derive(Clone, Debug)]
pub struct CrfGradient<F> {
    pub emissions: Matrix<F>,
    pub transitions: Matrix<F>,
    pub start: Vec<F>,
    pub stop: Vec<F>,
}

/// NLL and, when `with_gradient`, its gradient with respect to the raw
/// emissions and the CRF parameters.
pub fn crf_nll_and_gradient<F: Real>(
    emissions: &Matrix<F>,
    transitions: &Matrix<F>,
    start: &[F],
    stop: &[F],
    gold: &[usize],
    mask: &[bool],
    with_gradient: bool,
) -> Result<(F, Option<CrfGradient<F>>)> {
    if gold.len() != emissions.rows() {
        return Err(Error::Shape(format!(
            "{} gold tags for {} positions",
            gold.len(),
            emissions.rows()
        )));
    }
    if mask.len() != gold.len() {
        return Err(Error::Shape(format!("gold length {} vs mask length {}", gold.len(), mask.len())));
    }
    let crf = Crf::new(transitions, start, stop);
    crf.check(emissions)?;
    if let Some(&bad) = gold.iter().find(|&&y| y >= crf.tags()) {
        return Err(Error::OutOfRange {
            id: bad,
            size: crf.tags(),
        });
    }
    let e = masked_emissions(emissions, mask);
    let clamp: Vec<Option<usize>> = gold
        .iter()
        .zip(mask)
        .map(|(&y, &m)| if m { Some(y) } else { None })
        .collect();
    if !with_gradient {
        let (_, log_z) = crf.forward(&e, None);
        let (_, log_gold) = crf.forward(&e, Some(&clamp));
        return Ok((log_z - log_gold, None));
    }
    let free = crf.marginals(&e, None)?;
    let fixed = crf.marginals(&e, Some(&clamp))?;
    let (len, k) = (e.rows(), e.cols());
    let mut de = Matrix::zeros(len, k);
    for t in 0..len {
        if !mask[t] {
            continue;
        }
        for y in 0..k {
            de.set(t, y, free.unary.get(t, y) - fixed.unary.get(t, y));
        }
    }
    let mut dt = Matrix::zeros(k, k);
    for j in 0..k {
        for y in 0..k {
            dt.set(j, y, free.pair.get(j, y) - fixed.pair.get(j, y));
        }
    }
    let dstart = (0..k).map(|y| free.unary.get(0, y) - fixed.unary.get(0, y)).collect();
    let dstop = (0..k)
        .map(|y| free.unary.get(len - 1, y) - fixed.unary.get(len - 1, y))
        .collect();
    let nll = free.log_z - fixed.log_z;
    Ok((
        nll,
        Some(CrfGradient {
            emissions: de,
            transitions: dt,
            start: dstart,
            stop: dstop,
        }),
    ))
}

pub fn crf_viterbi<F: Real>(
    emissions: &Matrix<F>,
    transitions: &Matrix<F>,
    start: &[F],
    stop: &[F],
) -> Result<Vec<usize>> {
    Crf::new(transitions, start, stop).viterbi(emissions)
}
