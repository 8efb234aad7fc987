//! Population voting readout.
//!
//! The neurons of the last fully-connected layer are partitioned into one
//! population per class. The constant matrix `M` averages each population's
//! firing, so the class score is the population rate, and classification is
//! the argmax of the rates averaged over the simulation window.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{matmul, matvec_transpose, Result, Scalar, Tensor, TensorError};

/// Constant class-assignment matrix `M[num_classes, n_last]` whose nonzero
/// entries are `1/population` of the owning class.
#[derive(Clone, Debug, PartialEq)]
pub struct VotingMatrix<S: Scalar> {
    m: Tensor<S>,
    assignment: Vec<usize>,
    population: Vec<usize>,
}

/// Partition `n_last` output neurons over `num_classes` classes as evenly as
/// possible. The default assignment is the deterministic block rule
/// `class(i) = floor(i * num_classes / n_last)`; passing a seed shuffles
/// which neuron gets which class while keeping the population sizes.
pub fn build_voting_matrix<S: Scalar>(
    num_classes: usize,
    n_last: usize,
    seed: Option<u64>,
) -> Result<VotingMatrix<S>> {
    if num_classes < 2 {
        return Err(TensorError::Contract {
            op: "build_voting_matrix",
            detail: format!("need at least 2 classes, got {num_classes}"),
        });
    }
    if n_last < num_classes {
        return Err(TensorError::Contract {
            op: "build_voting_matrix",
            detail: format!("{n_last} voting neurons cannot cover {num_classes} classes"),
        });
    }
    let mut assignment: Vec<usize> = (0..n_last).map(|i| i * num_classes / n_last).collect();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        assignment.shuffle(&mut rng);
    }
    let mut population = vec![0usize; num_classes];
    for &c in &assignment {
        population[c] += 1;
    }
    let mut m = Tensor::zeros(&[num_classes, n_last]);
    for (i, &c) in assignment.iter().enumerate() {
        m.data_mut()[c * n_last + i] = S::one() / S::from_usize(population[c]);
    }
    Ok(VotingMatrix {
        m,
        assignment,
        population,
    })
}

impl<S: Scalar> VotingMatrix<S> {
    pub fn num_classes(&self) -> usize {
        self.m.shape()[0]
    }

    pub fn n_last(&self) -> usize {
        self.m.shape()[1]
    }

    /// Class owning each output neuron.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Neurons per class.
    pub fn population(&self) -> &[usize] {
        &self.population
    }

    pub fn matrix(&self) -> &Tensor<S> {
        &self.m
    }

    /// One step's class scores: `M * spikes`.
    pub fn apply(&self, last_layer_spikes: &Tensor<S>) -> Result<Tensor<S>> {
        matmul(&self.m, last_layer_spikes)
    }

    /// Adjoint of [`apply`]: `M^T * grad`.
    pub fn backward(&self, grad_scores: &Tensor<S>) -> Result<Tensor<S>> {
        matvec_transpose(&self.m, grad_scores)
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn classify<S: Scalar>(vote_average: &Tensor<S>) -> usize {
    let mut best = 0;
    let mut best_val = S::neg_infinity();
    for (i, &v) in vote_average.data().iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neuron_per_class_is_identity_scaled() {
        let vm = build_voting_matrix::<f64>(10, 10, None).unwrap();
        assert_eq!(vm.population(), &[1; 10]);
        for i in 0..10 {
            assert_eq!(vm.matrix().data()[i * 10 + i], 1.0);
        }
        assert_eq!(vm.matrix().sum(), 10.0);
    }

    #[test]
    fn remainder_spread_for_1024_neurons() {
        let vm = build_voting_matrix::<f64>(10, 1024, None).unwrap();
        let mut sizes = vm.population().to_vec();
        sizes.sort_unstable();
        assert_eq!(&sizes[..6], &[102; 6]);
        assert_eq!(&sizes[6..], &[103; 4]);
    }

    #[test]
    fn columns_have_one_entry_of_reciprocal_population() {
        let vm = build_voting_matrix::<f64>(3, 8, None).unwrap();
        for i in 0..8 {
            let col: Vec<f64> = (0..3).map(|c| vm.matrix().data()[c * 8 + i]).collect();
            let nonzero: Vec<(usize, f64)> = col
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, v)| v != 0.0)
                .collect();
            assert_eq!(nonzero.len(), 1);
            let (class, value) = nonzero[0];
            assert_eq!(class, vm.assignment()[i]);
            assert_eq!(value, 1.0 / vm.population()[class] as f64);
        }
    }

    #[test]
    fn shuffled_assignment_keeps_populations() {
        let plain = build_voting_matrix::<f64>(10, 103, None).unwrap();
        let shuffled = build_voting_matrix::<f64>(10, 103, Some(42)).unwrap();
        let mut a = plain.population().to_vec();
        let mut b = shuffled.population().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_ne!(plain.assignment(), shuffled.assignment());
        // Seeded shuffle is reproducible.
        let again = build_voting_matrix::<f64>(10, 103, Some(42)).unwrap();
        assert_eq!(shuffled.assignment(), again.assignment());
    }

    #[test]
    fn too_few_neurons_rejected() {
        assert!(build_voting_matrix::<f64>(10, 9, None).is_err());
    }

    #[test]
    fn fully_firing_population_scores_one() {
        let vm = build_voting_matrix::<f64>(2, 6, None).unwrap();
        let mut spikes = Tensor::zeros(&[6]);
        for (i, &c) in vm.assignment().iter().enumerate() {
            if c == 1 {
                spikes.data_mut()[i] = 1.0;
            }
        }
        let scores = vm.apply(&spikes).unwrap();
        assert_eq!(scores.data(), &[0.0, 1.0]);
    }

    #[test]
    fn classify_picks_peak() {
        let v = Tensor::from_vec(&[5], vec![0.0, 0.0, 0.0, 0.9, 0.0]).unwrap();
        assert_eq!(classify(&v), 3);
    }

    #[test]
    fn classify_breaks_ties_low() {
        let flat = Tensor::from_vec(&[4], vec![0.25; 4]).unwrap();
        assert_eq!(classify(&flat), 0);
        let pair = Tensor::from_vec(&[4], vec![0.2, 0.2, 0.1, 0.0]).unwrap();
        assert_eq!(classify(&pair), 0);
    }

    #[test]
    fn backward_is_adjoint_of_apply() {
        let vm = build_voting_matrix::<f64>(3, 7, None).unwrap();
        let spikes = Tensor::from_vec(&[7], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let grad = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let lhs = vm.apply(&spikes).unwrap().dot(&grad).unwrap();
        let rhs = spikes.dot(&vm.backward(&grad).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
