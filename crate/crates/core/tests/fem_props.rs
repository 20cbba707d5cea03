mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynlap::fem::{assemble_slice, average_system};
use dynlap::mesh::{triangulate_points, TriMesh};
use dynlap::synth::boundary_ring;
use dynlap::LonLat;

fn random_mesh(seed: u64, n: usize) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<LonLat> = (0..n)
        .map(|_| LonLat::new(rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..5.0)))
        .collect();
    triangulate_points(&pts, &(0..n).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn slice_conservation_kernel_symmetry(seed in 0u64..10_000, n in 3usize..150) {
        let mesh = random_mesh(seed, n);
        let s = assemble_slice(&mesh, n + 3).unwrap();
        let area = mesh.area();
        prop_assert!((s.mass.sum_entries() - area).abs() <= 1e-8 * area);
        let d1 = s.stiffness.mul(&vec![1.0; n + 3]);
        prop_assert!(d1.iter().all(|v| v.abs() <= 1e-10 * s.stiffness.max_abs()));
        for i in 0..n + 3 {
            for (j, v) in s.stiffness.row(i) {
                prop_assert_eq!(s.stiffness.get(j, i), v);
            }
        }
        // indices never meshed stay empty
        for g in n..n + 3 {
            prop_assert_eq!(s.mass.row(g).count(), 0);
        }
    }

    #[test]
    fn assembly_is_order_independent(seed in 0u64..10_000, n in 3usize..120) {
        let mesh = random_mesh(seed, n);
        let mut tris = mesh.triangles().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        for i in (1..tris.len()).rev() {
            tris.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = TriMesh::new(mesh.vertices().to_vec(), mesh.global_index().to_vec(), tris).unwrap();
        let (a, b) = (assemble_slice(&mesh, n).unwrap(), assemble_slice(&shuffled, n).unwrap());
        for i in 0..n {
            for (j, v) in a.stiffness.row(i) {
                let w = b.stiffness.get(i, j);
                prop_assert!((v - w).abs() <= 1e-12 * v.abs().max(1e-300), "K[{},{}] {} vs {}", i, j, v, w);
            }
            for (j, v) in a.mass.row(i) {
                prop_assert!((v - b.mass.get(i, j)).abs() <= 1e-12 * v.abs());
            }
        }
    }

    #[test]
    fn averaged_forms_are_semidefinite(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<LonLat>>> = (0..60)
            .map(|_| {
                let mut p = LonLat::new(rng.gen_range(1.0..9.0), rng.gen_range(1.0..9.0));
                (0..3)
                    .map(|_| {
                        p = LonLat::new((p.lon + rng.gen_range(-0.5..0.5)).clamp(0.2, 9.8), (p.lat + rng.gen_range(-0.5..0.5)).clamp(0.2, 9.8));
                        Some(p)
                    })
                    .collect()
            })
            .collect();
        let traj = common::trajectories(rows);
        let coast = boundary_ring(LonLat::new(0.0, 0.0), LonLat::new(10.0, 10.0), 1.0).unwrap();
        let (sys, _) = common::build_system(&traj, &coast, 1e5);
        for _ in 0..10 {
            let x: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale = sys.stiffness.max_abs() * x.iter().map(|v| v * v).sum::<f64>();
            prop_assert!(sys.stiffness.quad_form(&x) >= -1e-12 * scale);
            prop_assert!(sys.mass.quad_form(&x) >= 0.0);
        }
        prop_assert!(sys.free.iter().all(|&g| g < traj.n_floats()));
    }
}

#[test]
fn identity_flow_reduces_to_static_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<LonLat> = (0..50).map(|_| LonLat::new(rng.gen_range(0.5..9.5), rng.gen_range(0.5..9.5))).collect();
    let traj = common::trajectories(pts.iter().map(|&p| vec![Some(p); 4]).collect());
    let coast = boundary_ring(LonLat::new(0.0, 0.0), LonLat::new(10.0, 10.0), 1.0).unwrap();
    let (sys, meshes) = common::build_system(&traj, &coast, 1e5);
    let once = assemble_slice(&meshes[0], sys.dim()).unwrap();
    let direct = average_system(&[once.clone()], 1, traj.n_floats()..sys.dim(), None).unwrap();
    assert_eq!(sys.free, direct.free);
    for i in 0..sys.dim() {
        for (j, v) in once.stiffness.row(i) {
            assert!((sys.stiffness.get(i, j) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        for (j, v) in once.mass.row(i) {
            assert!((sys.mass.get(i, j) - v).abs() <= 1e-12 * v.abs());
        }
    }
}

#[test]
fn unmeshed_months_count_in_the_average() {
    let mesh = random_mesh(1, 20);
    let s = assemble_slice(&mesh, 20).unwrap();
    let sys = average_system(&[s.clone()], 4, 20..20, None).unwrap();
    assert!((sys.mass.sum_entries() - 0.25 * s.mass.sum_entries()).abs() < 1e-12);
}
