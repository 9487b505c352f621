//! Browser bindings for the `fracgs` solvers.
//!
//! Each export takes a JSON request and returns a JSON string. The plain
//! `*_json` functions hold the logic so they can be tested natively.

use fracgs::continuation::{BranchOptions, Continuation};
use fracgs::evolution::stability_probe;
use fracgs::groundstate::{solve_ground_state, GroundState, SolverOptions};
use fracgs::{Grid, ModelParams};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Request {
    pub s: f64,
    pub q: f64,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub points: usize,
    pub lambda_min: f64,
    pub samples: usize,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for Request {
    fn default() -> Self {
        Self {
            s: 0.5,
            q: 6.0,
            lambda: -1.0,
            half_width: 12.0,
            points: 256,
            lambda_min: -10.0,
            samples: 40,
            eps: 1e-3,
            t_end: 5.0,
            dt: 2e-3,
            seed: 11,
        }
    }
}

impl Request {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    fn grid(&self) -> Result<Grid, String> {
        Grid::new(1, self.half_width, self.points).map_err(|e| e.to_string())
    }
}

fn solver() -> SolverOptions {
    SolverOptions {
        spectrum: false,
        ..SolverOptions::default()
    }
}

fn solve(req: &Request) -> Result<GroundState, String> {
    let p = ModelParams::new(1, req.s, req.q, req.lambda).map_err(|e| e.to_string())?;
    let gs = solve_ground_state(p, &req.grid()?, &solver()).map_err(|e| e.to_string())?;
    if !gs.converged() {
        return Err(format!("no convergence (residual {:.2e})", gs.residual_norm));
    }
    Ok(gs)
}

/// Ground-state profile on the grid nodes with its integrals.
pub fn ground_state_json(req: &Request) -> Result<Value, String> {
    let gs = solve(req)?;
    let u = gs.u.as_real().map_err(|e| e.to_string())?;
    Ok(json!({
        "x": gs.u.grid().axis_nodes(),
        "u": u,
        "lambda1": gs.lambda1,
        "mass": gs.mass(),
        "action": gs.action,
        "pohozaev_rel": gs.identities.pohozaev_rel,
        "residual": gs.residual_norm,
    }))
}

/// Mass curve on `[lambda_min, λ₁)` with slope labels and the fold.
pub fn mass_curve_json(req: &Request) -> Result<Value, String> {
    let opts = BranchOptions {
        lambda_min: req.lambda_min,
        points: req.samples,
        solver: solver(),
        ..BranchOptions::default()
    };
    let ctx = Continuation::new(1, req.s, req.q, &req.grid()?, opts.solver.clone())
        .map_err(|e| e.to_string())?;
    let curve = ctx.trace(&opts).map_err(|e| e.to_string())?;
    let fold = ctx.find_fold(&curve, 1e-3).ok();
    Ok(json!({
        "lambda1": curve.lambda1,
        "lambda": curve.points.iter().map(|p| p.lambda).collect::<Vec<_>>(),
        "mass": curve.points.iter().map(|p| p.mass).collect::<Vec<_>>(),
        "stability": curve.points.iter().map(|p| p.stability.to_string()).collect::<Vec<_>>(),
        "complete": curve.complete,
        "fold": fold.map(|f| json!({"lambda_star": f.lambda_star, "c0": f.c0})),
    }))
}

/// Deviation from the orbit of `u_λ` after a seeded perturbation.
pub fn stability_json(req: &Request) -> Result<Value, String> {
    let gs = solve(req)?;
    let rep = stability_probe(&gs, req.eps, req.t_end, req.dt, req.seed).map_err(|e| e.to_string())?;
    let verdict = if rep.looks_unstable() {
        "unstable"
    } else if rep.looks_stable() {
        "stable"
    } else {
        "inconclusive"
    };
    Ok(json!({
        "t": rep.samples.iter().map(|s| s.t).collect::<Vec<_>>(),
        "deviation": rep.samples.iter().map(|s| s.deviation).collect::<Vec<_>>(),
        "small_threshold": rep.small_threshold,
        "large_threshold": rep.large_threshold,
        "blow_up_time": rep.blow_up_time,
        "verdict": verdict,
    }))
}

fn export(text: &str, f: fn(&Request) -> Result<Value, String>) -> Result<String, JsError> {
    let req = Request::parse(text).map_err(|e| JsError::new(&e))?;
    f(&req).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ground_state(request: &str) -> Result<String, JsError> {
    export(request, ground_state_json)
}

#[wasm_bindgen]
pub fn mass_curve(request: &str) -> Result<String, JsError> {
    export(request, mass_curve_json)
}

#[wasm_bindgen]
pub fn stability(request: &str) -> Result<String, JsError> {
    export(request, stability_json)
}
