use fracgs::evolution::{evolve, EvolveOptions};
use fracgs::groundstate::{solve_ground_state, SolverOptions};
use fracgs::io::{read_state, write_state};
use fracgs::model::identity_residuals;
use fracgs::{Grid, ModelParams};

#[test]
fn solved_state_survives_the_file_and_passes_check() {
    let g = Grid::new(1, 8.0, 256).unwrap();
    let p = ModelParams::new(1, 1.0, 6.0, 0.0).unwrap();
    let gs = solve_ground_state(p, &g, &SolverOptions::default()).unwrap();
    assert!(gs.converged());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.json");
    write_state(&path, &gs.u, &gs.params, None).unwrap();
    let (u, q, _) = read_state(&path).unwrap();
    assert_eq!(u, gs.u);
    let id = identity_residuals(&u, &q).unwrap();
    assert!(id.pohozaev_rel <= 1e-6, "{}", id.pohozaev_rel);
}

#[test]
fn ground_state_is_a_standing_wave() {
    let g = Grid::new(1, 12.0, 512).unwrap();
    let p = ModelParams::new(1, 0.5, 6.0, 0.9).unwrap();
    let opts = SolverOptions {
        spectrum: false,
        ..SolverOptions::default()
    };
    let gs = solve_ground_state(p, &g, &opts).unwrap();
    let opts = EvolveOptions {
        dt: 1e-3,
        t_end: 2.0,
        sample_every: 100,
        nonlinear: true,
        snapshot_every: None,
    };
    let traj = evolve(&gs.u, &gs.params, &opts, Some(&gs.u)).unwrap();
    assert!(!traj.blew_up());
    assert!(traj.max_deviation() <= 1e-6, "{:e}", traj.max_deviation());
    assert!(traj.max_mass_drift() <= 1e-10, "{:e}", traj.max_mass_drift());
}
