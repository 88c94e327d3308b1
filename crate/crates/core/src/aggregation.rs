//! Parameter averaging: FedAvg on the server, neighbor averaging on DFL nodes.
//!
//! Inputs are always accumulated in ascending sender-id order, so the result
//! does not depend on the order in which updates arrived. The mean is kept
//! as a running mean (`m += (x - m) / k`), which returns the common value
//! bit-exactly when every input agrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

pub type NodeId = u32;

/// A parameter set stamped with its sender and round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub sender_id: NodeId,
    pub round: u32,
    pub params: ParameterSet,
}

impl ModelUpdate {
    pub fn new(sender_id: NodeId, round: u32, params: ParameterSet) -> Self {
        ModelUpdate { sender_id, round, params }
    }
}

/// Divisor used by [`fedavg_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divisor {
    /// Mean over the updates actually received.
    #[default]
    Participating,
    /// Sum of received updates divided by a fixed client count, even when
    /// fewer were sampled.
    FixedCount(usize),
}

fn sorted_by_sender<'a>(items: impl IntoIterator<Item = (NodeId, &'a ParameterSet)>) -> Result<Vec<&'a ParameterSet>> {
    let mut items: Vec<_> = items.into_iter().collect();
    items.sort_by_key(|(id, _)| *id);
    if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Aggregation(format!("two updates from sender {}", w[0].0)));
    }
    Ok(items.into_iter().map(|(_, p)| p).collect())
}

fn running_mean(sets: &[&ParameterSet]) -> Result<ParameterSet> {
    let first = *sets.first().ok_or_else(|| Error::Protocol("no model updates to aggregate".into()))?;
    if let Some(bad) = sets.iter().find(|s| !s.same_schema(first)) {
        return Err(Error::Aggregation(format!(
            "schema {} does not match {}",
            bad.schema_id(),
            first.schema_id()
        )));
    }
    let mut mean = first.clone();
    for (k, set) in sets.iter().enumerate().skip(1) {
        let count = (k + 1) as f64;
        for (m, x) in mean.tensors_mut().iter_mut().zip(set.tensors()) {
            m.values_mut().iter_mut().zip(x.values()).for_each(|(m, &x)| *m += (x - *m) / count);
        }
    }
    Ok(mean)
}

/// Element-wise mean of the received updates.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<ParameterSet> {
    fedavg_with(updates, Divisor::Participating)
}

pub fn fedavg_with(updates: &[ModelUpdate], divisor: Divisor) -> Result<ParameterSet> {
    let sets = sorted_by_sender(updates.iter().map(|u| (u.sender_id, &u.params)))?;
    let mut mean = running_mean(&sets)?;
    if let Divisor::FixedCount(total) = divisor {
        if total < sets.len() {
            return Err(Error::Aggregation(format!("{} updates exceed the {total} expected clients", sets.len())));
        }
        mean.scale(sets.len() as f64 / total as f64);
    }
    Ok(mean)
}

/// Mean of the neighbors' updates, optionally counting the node's own
/// parameters (identified by `own_id`) as one more input.
pub fn neighbor_average(
    received: &[ModelUpdate],
    expected_neighbors: usize,
    own_id: NodeId,
    own: &ParameterSet,
    include_self: bool,
) -> Result<ParameterSet> {
    if received.len() != expected_neighbors {
        return Err(Error::RoundSync(format!(
            "expected {expected_neighbors} neighbor updates, received {}",
            received.len()
        )));
    }
    if received.iter().any(|u| u.sender_id == own_id) {
        return Err(Error::Aggregation(format!("node {own_id} received its own update")));
    }
    let mut items: Vec<(NodeId, &ParameterSet)> = received.iter().map(|u| (u.sender_id, &u.params)).collect();
    if include_self {
        items.push((own_id, own));
    }
    running_mean(&sorted_by_sender(items)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn scalar(v: f64) -> ParameterSet {
        ParameterSet::new(vec![Tensor::new("w", vec![1], vec![v]).unwrap()]).unwrap()
    }

    fn update(id: NodeId, v: f64) -> ModelUpdate {
        ModelUpdate::new(id, 1, scalar(v))
    }

    #[test]
    fn single_update_is_identity() {
        let u = ParameterSet::new(vec![
            Tensor::new("a", vec![2], vec![0.1, -3.0]).unwrap(),
            Tensor::new("b", vec![1, 1], vec![7.5]).unwrap(),
        ])
        .unwrap();
        let out = fedavg(&[ModelUpdate::new(4, 2, u.clone())]).unwrap();
        assert!(out.bit_eq(&u));
    }

    #[test]
    fn mean_of_two() {
        assert_eq!(fedavg(&[update(1, 2.0), update(2, 4.0)]).unwrap().to_flat(), vec![3.0]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(fedavg(&[]), Err(Error::Protocol(_))));
        let other = ModelUpdate::new(2, 1, ParameterSet::new(vec![Tensor::zeros("v", vec![1]).unwrap()]).unwrap());
        assert!(matches!(fedavg(&[update(1, 0.0), other]), Err(Error::Aggregation(_))));
        assert!(matches!(fedavg(&[update(1, 0.0), update(1, 1.0)]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn fixed_count_divisor_scales_by_sampled_fraction() {
        let out = fedavg_with(&[update(1, 2.0), update(2, 4.0)], Divisor::FixedCount(4)).unwrap();
        assert_eq!(out.to_flat(), vec![1.5]);
    }

    #[test]
    fn ring_neighbors_without_self() {
        let out = neighbor_average(&[update(0, 1.0), update(2, 3.0)], 2, 1, &scalar(100.0), false).unwrap();
        assert_eq!(out.to_flat(), vec![2.0]);
        let with_self = neighbor_average(&[update(0, 1.0), update(2, 3.0)], 2, 1, &scalar(5.0), true).unwrap();
        assert_eq!(with_self.to_flat(), vec![3.0]);
    }

    #[test]
    fn wrong_neighbor_count_is_round_sync_error() {
        assert!(matches!(
            neighbor_average(&[update(0, 1.0)], 2, 1, &scalar(0.0), false),
            Err(Error::RoundSync(_))
        ));
    }

    #[test]
    fn copies_of_own_params_return_own() {
        let own = scalar(0.1);
        let received = [update(0, 0.1), update(2, 0.1), update(3, 0.1)];
        for include_self in [false, true] {
            assert!(neighbor_average(&received, 3, 1, &own, include_self).unwrap().bit_eq(&own));
        }
    }

    fn arb_updates() -> impl Strategy<Value = Vec<ModelUpdate>> {
        (1usize..8, 1usize..5).prop_flat_map(|(count, width)| {
            prop::collection::vec(prop::collection::vec(-1e3f64..1e3, width), count).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let n = v.len();
                        ModelUpdate::new(i as u32 * 3, 0, ParameterSet::new(vec![Tensor::new("w", vec![n], v).unwrap()]).unwrap())
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut updates in arb_updates(), seed in any::<u64>()) {
            let reference = fedavg(&updates).unwrap();
            use rand::{seq::SliceRandom, SeedableRng};
            updates.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(fedavg(&updates).unwrap().bit_eq(&reference));
        }

        #[test]
        fn consensus_is_exact(v in prop::collection::vec(-1e6f64..1e6, 1..6), k in 1usize..10) {
            let n = v.len();
            let set = ParameterSet::new(vec![Tensor::new("w", vec![n], v).unwrap()]).unwrap();
            let updates: Vec<_> = (0..k).map(|i| ModelUpdate::new(i as u32, 0, set.clone())).collect();
            prop_assert!(fedavg(&updates).unwrap().bit_eq(&set));
        }

        #[test]
        fn stays_within_input_range(updates in arb_updates()) {
            let out = fedavg(&updates).unwrap();
            for (j, v) in out.values().enumerate() {
                let column: Vec<f64> = updates.iter().map(|u| u.params.to_flat()[j]).collect();
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= v && v <= hi);
            }
        }

        #[test]
        fn linear_in_scale(updates in arb_updates(), a in -10.0f64..10.0) {
            let scaled: Vec<_> = updates.iter().map(|u| {
                let mut p = u.params.clone();
                p.scale(a);
                ModelUpdate::new(u.sender_id, u.round, p)
            }).collect();
            let mut expected = fedavg(&updates).unwrap();
            expected.scale(a);
            let got = fedavg(&scaled).unwrap();
            for (x, y) in got.values().zip(expected.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
