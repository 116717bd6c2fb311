use octen::checkpoint;
use octen::compression::{compress, ReplicaSet, SummaryState};
use octen::cp::{als_mode_update, cp_als, AlsConfig, KruskalModel};
use octen::eval::{congruence, fitness};
use octen::recovery::{align_replicas, recover_nontemporal, stack_projections};
use octen::streaming::{init_stream, OctenConfig};
use octen::synth::SynthSpec;
use octen::tensor::{DenseTensor, Matrix, Shape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(Shape::new(dims.to_vec()).unwrap(), |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Exact per-mode least squares by the normal equations, built entry by entry.
fn normal_equations_update(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Matrix {
    let dims = t.dims();
    let rank = factors[0].ncols();
    let others: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
    let cols = dims[others[0]] * dims[others[1]];
    // design row for (j, k): product of the other factors' rows
    let mut z = Matrix::zeros(cols, rank);
    let mut y = Matrix::zeros(dims[mode], cols);
    for j in 0..dims[others[0]] {
        for k in 0..dims[others[1]] {
            let c = j + k * dims[others[0]];
            for r in 0..rank {
                z[(c, r)] = factors[others[0]][(j, r)] * factors[others[1]][(k, r)];
            }
            for i in 0..dims[mode] {
                let mut idx = [0; 3];
                idx[mode] = i;
                idx[others[0]] = j;
                idx[others[1]] = k;
                y[(i, c)] = t.get(&idx);
            }
        }
    }
    let gram = z.transpose() * &z;
    let rhs = &y * &z;
    gram.lu().solve(&rhs.transpose()).unwrap().transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mode_update_is_the_least_squares_minimizer(seed in any::<u64>(), mode in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, &[3, 3, 3]);
        let factors: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 3, 2)).collect();
        let got = als_mode_update(&t, &factors, mode).unwrap();
        let want = normal_equations_update(&t, &factors, mode);
        prop_assert!((got - &want).amax() <= 1e-8 * want.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn als_objective_never_increases(seed in any::<u64>(), rank in 1usize..4, line_search in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, &[4, 5, 3]);
        let cfg = AlsConfig { max_iters: 40, n_restarts: 1, line_search, ..AlsConfig::new(rank).with_seed(seed) };
        let out = cp_als(&t, &cfg).unwrap();
        for w in out.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        for f in out.model.factors() {
            for c in f.column_iter() {
                prop_assert!((c.norm() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn normalization_and_gauge_keep_the_reconstruction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<Matrix> = [4, 3, 5].iter().map(|&d| random_matrix(&mut rng, d, 3)).collect();
        let m = KruskalModel::new(factors, vec![1.5, 0.5, 2.0]).unwrap();
        let x = m.reconstruct();
        let scale = x.frobenius_norm();
        prop_assert!(m.normalized().reconstruct().distance(&x).unwrap() <= 1e-9 * scale);

        // permute, rescale columns, compensate in lambda
        let perm = [2, 0, 1];
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let factors: Vec<Matrix> = m.factors().iter().map(|f| {
            let mut g = f.select_columns(perm.iter());
            for (r, mut c) in g.column_iter_mut().enumerate() { c *= s[r]; }
            g
        }).collect();
        let lambda: Vec<f64> = (0..3).map(|r| m.lambda()[perm[r]] / s[r].powi(3)).collect();
        let g = KruskalModel::new(factors, lambda).unwrap();
        prop_assert!(g.reconstruct().distance(&x).unwrap() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn summaries_are_additive(seed in any::<u64>(), split in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[6, 6, 7]);
        let mut rs = ReplicaSet::generate(&[6, 6], 2, 4, 2, 2, seed).unwrap();
        let a = rs.extend_temporal(split).unwrap();
        let b = rs.extend_temporal(7 - split).unwrap();
        for rep in rs.replicas() {
            let whole = compress(&x, rep, 0..7).unwrap();
            let mut parts = compress(&x.slice_mode(2, a.clone()).unwrap(), rep, a.clone()).unwrap();
            parts.add_assign(&compress(&x.slice_mode(2, b.clone()).unwrap(), rep, b.clone()).unwrap()).unwrap();
            prop_assert!(whole.distance(&parts).unwrap() <= 1e-10 * whole.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn shared_block_survives_extensions(seed in any::<u64>(), shared in 0usize..4, grow in 1usize..4) {
        let mut rs = ReplicaSet::generate(&[5, 6], 2, 4, 3, shared, seed).unwrap();
        rs.extend_temporal(grow).unwrap();
        rs.extend_temporal(2).unwrap();
        let first = rs.replica(0);
        for rep in rs.replicas() {
            for (a, b) in rep.mats().iter().zip(first.mats()) {
                prop_assert_eq!(a.columns(0, shared), b.columns(0, shared));
            }
        }
    }

    #[test]
    fn summary_updates_commute(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z1: Vec<DenseTensor> = (0..2).map(|_| random_tensor(&mut rng, &[3, 3, 3])).collect();
        let z2: Vec<DenseTensor> = (0..2).map(|_| random_tensor(&mut rng, &[3, 3, 3])).collect();
        let mut one = SummaryState::new(2, 3, 3, 1).unwrap();
        one.update(&z1).unwrap();
        one.update(&z2).unwrap();
        let mut combined = z1.clone();
        for (c, z) in combined.iter_mut().zip(&z2) { c.add_assign(z).unwrap(); }
        let mut other = SummaryState::new(2, 3, 3, 1).unwrap();
        other.update(&combined).unwrap();
        for (a, b) in one.summaries().iter().zip(other.summaries()) {
            prop_assert!(a.distance(b).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn alignment_absorbs_any_gauge(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rs = ReplicaSet::generate(&[7, 6], 2, 5, 3, 2, seed).unwrap();
        let rows = rs.extend_temporal(4).unwrap();
        let truth: Vec<Matrix> = [7, 6, 4].iter().map(|&d| random_matrix(&mut rng, d, 3)).collect();
        let models: Vec<KruskalModel> = rs.replicas().iter().map(|rep| {
            let f = truth.iter().enumerate().map(|(m, a)| {
                let p = if m == 2 { rep.temporal_rows(rows.clone()).unwrap() } else { rep.projection(m).unwrap().clone() };
                p.transpose() * a
            }).collect();
            KruskalModel::from_factors(f).unwrap()
        }).collect();
        let base = align_replicas(&models, &rs).unwrap();

        let mut scrambled = models.clone();
        let perm = [1, 2, 0];
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let old = &models[2];
        let factors: Vec<Matrix> = old.factors().iter().map(|f| {
            let mut g = f.select_columns(perm.iter());
            for (r, mut c) in g.column_iter_mut().enumerate() { c *= s[r]; }
            g
        }).collect();
        let lambda: Vec<f64> = (0..3).map(|r| old.lambda()[perm[r]] / s[r].powi(3)).collect();
        scrambled[2] = KruskalModel::new(factors, lambda).unwrap();
        let moved = align_replicas(&scrambled, &rs).unwrap();
        for m in 0..3 {
            let scale = base.stack(m).amax().max(1.0);
            prop_assert!((moved.stack(m) - base.stack(m)).amax() <= 1e-9 * scale);
        }
    }

    #[test]
    fn exact_stacks_are_solved_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rs = ReplicaSet::generate(&[9, 6], 2, 4, 4, 1, seed).unwrap();
        let rows = rs.extend_temporal(3).unwrap();
        let truth: Vec<Matrix> = [9, 6, 3].iter().map(|&d| random_matrix(&mut rng, d, 2)).collect();
        let models: Vec<KruskalModel> = rs.replicas().iter().map(|rep| {
            let f = truth.iter().enumerate().map(|(m, a)| {
                let p = if m == 2 { rep.temporal_rows(rows.clone()).unwrap() } else { rep.projection(m).unwrap().clone() };
                p.transpose() * a
            }).collect();
            KruskalModel::from_factors(f).unwrap()
        }).collect();
        let stack = align_replicas(&models, &rs).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        let got = recover_nontemporal(&stack, &proj, 0).unwrap().factor;
        // the stack is in replica 0's distributed gauge; compare column directions
        for r in 0..2 {
            let (a, b) = (got.column(r), truth[0].column(r));
            let rel = (a * (a.dot(&b) / a.norm_squared()) - b).norm() / b.norm();
            prop_assert!(rel <= 1e-8, "column {}: {}", r, rel);
        }
    }

    #[test]
    fn solve_ignores_replica_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs = ReplicaSet::generate(&[8, 5], 2, 4, 3, 1, seed).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        let a0 = random_matrix(&mut rng, 8, 2);
        let rhs = proj.matrix() * &a0;
        let direct = octen::linalg::lstsq(proj.matrix(), &rhs).solution;
        // reverse the replica blocks of both sides
        let order = [2, 1, 0];
        let reorder = |m: &Matrix| {
            let mut out = Matrix::zeros(m.nrows(), m.ncols());
            for (to, &from) in order.iter().enumerate() {
                out.rows_mut(to * 4, 4).copy_from(&m.rows(from * 4, 4));
            }
            out
        };
        let swapped = octen::linalg::lstsq(&reorder(proj.matrix()), &reorder(&rhs)).solution;
        prop_assert!((direct - swapped).amax() <= 1e-9);
    }

    #[test]
    fn fitness_is_scale_covariant(seed in any::<u64>(), exp in -8i32..8, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 4, 2]);
        let y = random_tensor(&mut rng, &[3, 4, 2]);
        let f = fitness(&x, &y).unwrap();
        // powers of two scale without rounding
        let two = 2f64.powi(exp);
        prop_assert_eq!(fitness(&x.scaled(two), &y.scaled(two)).unwrap(), f);
        prop_assert!((fitness(&x.scaled(-c), &y.scaled(-c)).unwrap() - f).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn congruence_is_gauge_invariant(seed in any::<u64>()) {
        let truth = SynthSpec::new(vec![5, 4, 6], 4, seed).ground_truth().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let est = SynthSpec::new(vec![5, 4, 6], 4, seed ^ 2).ground_truth().unwrap();
        let base = congruence(&truth, &est).unwrap();
        let perm = [3, 1, 0, 2];
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..5.0)).collect();
        let factors: Vec<Matrix> = est.factors().iter().map(|f| {
            let mut g = f.select_columns(perm.iter());
            for (r, mut c) in g.column_iter_mut().enumerate() { c *= s[r]; }
            g
        }).collect();
        let lambda: Vec<f64> = (0..4).map(|r| est.lambda()[perm[r]] / s[r].powi(3)).collect();
        let moved = congruence(&truth, &KruskalModel::new(factors, lambda).unwrap()).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoints_round_trip_bytes(seed in any::<u64>(), t in 1usize..4) {
        let (x, _) = SynthSpec::new(vec![8, 8, t], 2, seed).with_noise(0.0, 0.1).generate().unwrap();
        let state = init_stream(&x, OctenConfig::new(2, 3, 4, 1).with_seed(seed)).unwrap();
        let bytes = checkpoint::save(&state);
        prop_assert_eq!(checkpoint::save(&checkpoint::load(&bytes).unwrap()), bytes);
    }
}
