//! Positive pairs and collaborative InfoNCE losses.
//!
//! Encoder `p` scores its own representations (queries) against every other
//! encoder's representations of the same items (keys). Row `j` of the query
//! matrix and row `j` of a key matrix describe the same graph or node and form
//! the positive pair; every other row of the key matrix is a negative.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{log_sum_exp, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// How query/key similarity is measured before temperature scaling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Similarity {
    /// Raw inner product.
    #[default]
    Dot,
    /// Inner product of row-normalized embeddings.
    Cosine,
}

/// Where negatives come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Other graphs of the minibatch (graph-level).
    Batchwise,
    /// Other nodes of the same graph (node-level).
    Graphwise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub mode: LossMode,
    pub similarity: Similarity,
    /// Block gradients into key embeddings within each encoder's loss.
    pub detach_keys: bool,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64, mode: LossMode) -> Self {
        ContrastiveConfig {
            temperature,
            mode,
            similarity: Similarity::Dot,
            detach_keys: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One positive pair: item `item` as embedded by the query encoder and by
/// `key_encoder`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositivePair {
    pub query_encoder: usize,
    pub key_encoder: usize,
    pub item: usize,
}

/// All positive pairs for query encoder `p` among `k` encoders and `n` items,
/// item-major. Indices are zero-based.
pub fn positive_pairs(k: usize, n: usize, p: usize) -> Result<Vec<PositivePair>> {
    if k < 2 {
        return Err(Error::TooFewEncoders(k));
    }
    if p >= k {
        return Err(Error::InvalidArgument(format!("query encoder {p} out of range for {k}")));
    }
    Ok((0..n)
        .flat_map(|item| {
            (0..k).filter(move |&q| q != p).map(move |q| PositivePair {
                query_encoder: p,
                key_encoder: q,
                item,
            })
        })
        .collect())
}

/// Two-encoder InfoNCE summed over the `N` query rows.
pub fn info_nce(tape: &mut Tape<'_>, query: Var, key: Var, temperature: f64) -> Result<Var> {
    tape.info_nce(query, key, temperature)
}

/// Loss value only, on plain matrices.
pub fn info_nce_value(query: &Matrix, key: &Matrix, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(query.clone());
    let k = tape.constant(key.clone());
    let l = tape.info_nce(q, k, temperature)?;
    Ok(tape.value(l).get(0, 0))
}

/// Loss of encoder `p`: the sum of its InfoNCE against every other encoder.
/// With `detach_keys`, gradients reach only `embeddings[p]`.
pub fn encoder_loss(
    tape: &mut Tape<'_>,
    p: usize,
    embeddings: &[Var],
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    cfg.validate()?;
    let k = embeddings.len();
    if k < 2 {
        return Err(Error::TooFewEncoders(k));
    }
    if p >= k {
        return Err(Error::InvalidArgument(format!("encoder {p} out of range for {k}")));
    }
    let shape = tape.shape(embeddings[0]);
    if let Some(&bad) = embeddings.iter().find(|&&e| tape.shape(e) != shape) {
        return Err(Error::shape("encoder_loss", shape, tape.shape(bad)));
    }
    let prep = |tape: &mut Tape<'_>, v: Var| -> Result<Var> {
        match cfg.similarity {
            Similarity::Dot => Ok(v),
            Similarity::Cosine => tape.row_normalize(v),
        }
    };
    let query = prep(tape, embeddings[p])?;
    let mut total: Option<Var> = None;
    for (q, &emb) in embeddings.iter().enumerate() {
        if q == p {
            continue;
        }
        let key = if cfg.detach_keys { tape.detach(emb) } else { emb };
        let key = prep(tape, key)?;
        let term = tape.info_nce(query, key, cfg.temperature)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("k >= 2"))
}

/// Value of encoder `p`'s loss on plain matrices.
pub fn encoder_loss_value(p: usize, embeddings: &[Matrix], cfg: &ContrastiveConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = embeddings.iter().map(|m| tape.constant(m.clone())).collect();
    let l = encoder_loss(&mut tape, p, &vars, cfg)?;
    Ok(tape.value(l).get(0, 0))
}

/// Evaluates the loss in its ratio form, `-Σ_j log(exp(s_jj) / Σ_n exp(s_jn))`,
/// and in its expanded form, `-Σ_j [s_jj - log Σ_n exp(s_jn)]`, each computed
/// directly from the scores, and returns their absolute difference.
pub fn loss_equivalence_oracle(query: &Matrix, key: &Matrix, temperature: f64) -> Result<f64> {
    let (ratio, expanded) = loss_forms(query, key, temperature)?;
    Ok(libm::fabs(ratio - expanded))
}

/// Both forms checked by [`loss_equivalence_oracle`].
pub fn loss_forms(query: &Matrix, key: &Matrix, temperature: f64) -> Result<(f64, f64)> {
    if query.shape() != key.shape() {
        return Err(Error::shape("loss_forms", query.shape(), key.shape()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let n = query.rows();
    let mut ratio = 0.0;
    let mut expanded = 0.0;
    let mut row = alloc::vec![0.0; n];
    for j in 0..n {
        for (m, s) in row.iter_mut().enumerate() {
            *s = dot(query.row(j), key.row(m)) / temperature;
        }
        let denom: f64 = row.iter().map(|&s| libm::exp(s)).sum();
        ratio -= libm::log(libm::exp(row[j]) / denom);
        expanded -= row[j] - log_sum_exp(&row);
    }
    Ok((ratio, expanded))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_enumeration() {
        let pairs = positive_pairs(3, 2, 0).unwrap();
        let flat: Vec<(usize, usize)> = pairs.iter().map(|p| (p.item, p.key_encoder)).collect();
        assert_eq!(flat, [(0, 1), (0, 2), (1, 1), (1, 2)]);
        assert_eq!(positive_pairs(2, 1, 1).unwrap().len(), 1);
        for (k, n) in [(2, 5), (4, 3), (7, 1)] {
            assert_eq!(positive_pairs(k, n, 0).unwrap().len(), n * (k - 1));
        }
        assert_eq!(positive_pairs(1, 3, 0).unwrap_err(), Error::TooFewEncoders(1));
    }

    #[test]
    fn single_item_has_zero_loss() {
        let h = Matrix::from_rows(&[[0.3, -1.2]]);
        assert_eq!(info_nce_value(&h, &h, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn identity_embeddings_closed_form() {
        let i2 = Matrix::identity(2);
        let expect = 2.0 * libm::log(1.0 + libm::exp(-1.0));
        let got = info_nce_value(&i2, &i2, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.626523).abs() < 1e-6);
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.2, 0.2]]);
        let got = info_nce_value(&h, &h.map(|v| v * 0.5), 1e6).unwrap();
        let expect = 4.0 * libm::log(4.0);
        assert!((got - expect).abs() / expect < 0.01);
    }

    #[test]
    fn temperature_must_be_positive() {
        let h = Matrix::identity(2);
        assert!(info_nce_value(&h, &h, 0.0).is_err());
        assert!(info_nce_value(&h, &h, -1.0).is_err());
        assert!(info_nce_value(&h, &Matrix::identity(3), 1.0).is_err());
    }

    #[test]
    fn encoder_loss_sums_pairs() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [-0.3, 0.8], [0.1, -1.0]]);
        let b = Matrix::from_rows(&[[0.2, 0.1], [0.9, -0.4], [-0.5, 0.5]]);
        let cfg = ContrastiveConfig::new(0.7, LossMode::Batchwise);
        let two = encoder_loss_value(0, &[a.clone(), b.clone()], &cfg).unwrap();
        assert_eq!(two, info_nce_value(&a, &b, 0.7).unwrap());
        let three = encoder_loss_value(0, &[a.clone(), b.clone(), b.clone()], &cfg).unwrap();
        assert_eq!(three, 2.0 * two);
        assert_eq!(encoder_loss_value(0, &[a], &cfg).unwrap_err(), Error::TooFewEncoders(1));
    }

    #[test]
    fn expanded_form_matches_on_identity() {
        let i2 = Matrix::identity(2);
        let (r, e) = loss_forms(&i2, &i2, 1.0).unwrap();
        assert!((r - 0.626523).abs() < 1e-6 && (e - 0.626523).abs() < 1e-6);
        let one = Matrix::from_rows(&[[2.0]]);
        assert_eq!(loss_forms(&one, &one, 1.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn detached_keys_receive_no_gradient() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [-0.3, 0.8]]);
        let b = Matrix::from_rows(&[[0.2, 0.1], [0.9, -0.4]]);
        let mut t = Tape::new();
        let va = t.param(a);
        let vb = t.param(b);
        let cfg = ContrastiveConfig::new(0.5, LossMode::Batchwise);
        let l = encoder_loss(&mut t, 0, &[va, vb], &cfg).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(va).is_some());
        assert!(t.grad(vb).is_none());

        let joint = ContrastiveConfig { detach_keys: false, ..cfg };
        let l = encoder_loss(&mut t, 0, &[va, vb], &joint).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(vb).is_some());
    }
}
