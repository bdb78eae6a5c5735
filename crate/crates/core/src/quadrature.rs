//! Deterministic node sets for the signal-parameter law.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;

use crate::drift::ParameterLaw;
use crate::error::{Error, Result};

/// Probability-normalized nodes: `E_ν[f] ≈ Σ_k exp(log_weights[k]) f(points[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub points: Vec<f64>,
    pub log_weights: Vec<f64>,
}

type Key = (u8, u64, u64, usize);

// Golub–Welsch at a few hundred nodes is costly; every path reuses the same rule.
fn cache() -> &'static Mutex<HashMap<Key, Arc<NodeSet>>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<NodeSet>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss–Hermite nodes for Gaussian laws, Gauss–Legendre for uniform laws,
/// a single node for a point mass.
pub fn nodes_for(law: &ParameterLaw, n_nodes: usize) -> Result<Arc<NodeSet>> {
    let n = NonZeroUsize::new(n_nodes)
        .ok_or_else(|| Error::InvalidArgument("quadrature needs at least one node".into()))?;
    law.validate()?;
    let key = match *law {
        ParameterLaw::Gaussian { truncate: true, .. } => {
            return Err(Error::UnsupportedLaw("truncated gaussian"))
        }
        ParameterLaw::Gaussian { variance, .. } => (0, variance.to_bits(), 0, n_nodes),
        ParameterLaw::Uniform { low, high } => (1, low.to_bits(), high.to_bits(), n_nodes),
        ParameterLaw::PointMass { value } => {
            return Ok(Arc::new(NodeSet {
                points: vec![value],
                log_weights: vec![0.0],
            }))
        }
    };
    if let Some(hit) = cache().lock().expect("node cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let set = match *law {
        ParameterLaw::Gaussian { variance, .. } => {
            let scale = (2.0 * variance).sqrt();
            let norm = std::f64::consts::PI.sqrt().ln();
            let rule = GaussHermite::new(n);
            filtered(
                rule.as_node_weight_pairs()
                    .iter()
                    .map(|&(x, w)| (scale * x, w.ln() - norm)),
            )
        }
        ParameterLaw::Uniform { low, high } => {
            let (mid, half) = (0.5 * (low + high), 0.5 * (high - low));
            let rule = GaussLegendre::new(n);
            filtered(
                rule.as_node_weight_pairs()
                    .iter()
                    .map(|&(x, w)| (mid + half * x, (0.5 * w).ln())),
            )
        }
        ParameterLaw::PointMass { .. } => unreachable!(),
    };
    let set = Arc::new(set);
    cache()
        .lock()
        .expect("node cache poisoned")
        .insert(key, set.clone());
    Ok(set)
}

fn filtered(pairs: impl Iterator<Item = (f64, f64)>) -> NodeSet {
    // nodes whose weight underflowed carry no mass
    let (points, log_weights) = pairs.filter(|(_, lw)| lw.is_finite()).unzip();
    NodeSet {
        points,
        log_weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expect(set: &NodeSet, f: impl Fn(f64) -> f64) -> f64 {
        set.points
            .iter()
            .zip(&set.log_weights)
            .map(|(x, lw)| lw.exp() * f(*x))
            .sum()
    }

    #[test]
    fn gaussian_moments() {
        let set = nodes_for(
            &ParameterLaw::Gaussian {
                variance: 2.0,
                truncate: false,
            },
            32,
        )
        .unwrap();
        assert!((expect(&set, |_| 1.0) - 1.0).abs() < 1e-13);
        assert!(expect(&set, |x| x).abs() < 1e-13);
        assert!((expect(&set, |x| x * x) - 2.0).abs() < 1e-12);
        assert!((expect(&set, |x| x.powi(4)) - 12.0).abs() < 1e-11);
    }

    #[test]
    fn large_rules_keep_unit_mass() {
        let set = nodes_for(
            &ParameterLaw::Gaussian {
                variance: 1.0,
                truncate: false,
            },
            512,
        )
        .unwrap();
        assert!((expect(&set, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!((expect(&set, |x| x * x) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn uniform_and_point_mass() {
        let set = nodes_for(&ParameterLaw::Uniform { low: -1.0, high: 3.0 }, 8).unwrap();
        assert!((expect(&set, |_| 1.0) - 1.0).abs() < 1e-14);
        assert!((expect(&set, |x| x) - 1.0).abs() < 1e-13);
        assert!((expect(&set, |x| x * x) - 7.0 / 3.0).abs() < 1e-12);
        let pm = nodes_for(&ParameterLaw::PointMass { value: 0.4 }, 64).unwrap();
        assert_eq!(pm.points, vec![0.4]);
    }

    #[test]
    fn unsupported_inputs() {
        let law = ParameterLaw::Gaussian {
            variance: 1.0,
            truncate: true,
        };
        assert_eq!(nodes_for(&law, 8).unwrap_err(), Error::UnsupportedLaw("truncated gaussian"));
        assert!(nodes_for(&ParameterLaw::PointMass { value: 0.0 }, 0).is_err());
    }
}
