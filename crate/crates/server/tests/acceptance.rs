//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits nonzero if any failed. Criteria run sequentially so the
//! timing checks are not disturbed by other tests.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use avatar_core::arm::{
    fk, forward_dynamics, gravity_torques, jacobian, kinetic_energy, mass_matrix, posed_meshes, IkSolver, JointState,
    JointVector, SrsAnalyticIk,
};
use avatar_core::mesh::{segment_hits_triangle, AabbTree, BruteForceIndex, OcclusionIndex, Segment, TriangleMesh, INTERSECTION_TOLERANCE};
use avatar_core::metrics::{ReferenceSet, RASTER_RESOLUTION};
use avatar_core::planner::{
    cell_weight, gen_candidates, select_next, CameraArm, CameraState, Candidate, PlannerConfig, PlannerTick, ViewPlanner,
    CELL_CLEARANCE,
};
use avatar_core::se3::{rotation_vector, Twist, Vec3};
use avatar_core::sim::{CanvasGrid, WorldConfig};
use avatar_core::ufic::{
    force_torque, impedance_torque, AxisSelection, DesiredMotion, ForceGains, ForceIntegrator, ForceSample, ImpedanceGains,
};
use avatar_server::config::{default_config_path, AvatarConfig};
use avatar_server::protocol::{ClientMessage, Condition};
use avatar_server::replay::{ReplayEvent, ReplayLog};
use avatar_server::script::{session_inputs, shape_samples, ScriptParams};
use avatar_server::session::{metrics_json, replay_log, run_session, SessionOptions, SessionOutcome};

const SHAPES: [&str; 4] = ["line", "square", "triangle", "circle"];

struct Report {
    results: Vec<(u32, bool, String)>,
}

impl Report {
    fn record(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} {} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass, detail));
    }
}

struct Fixture {
    config: AvatarConfig,
    world: WorldConfig,
    /// Scripted sessions per shape and condition.
    sessions: BTreeMap<(String, Condition), SessionOutcome>,
    session_seconds: f64,
}

fn fixture() -> Fixture {
    let config = AvatarConfig::load(default_config_path()).expect("shipped config");
    let world = config.world_config().unwrap();
    let refs = ReferenceSet::bundled();
    let mut sessions = BTreeMap::new();
    let started = Instant::now();
    for shape in SHAPES {
        let samples = shape_samples(refs.get(shape).unwrap(), &ScriptParams::default());
        let inputs = session_inputs(&samples, config.server.handshake_duration + 0.2);
        for c in [Condition::Stationary, Condition::Autonomous] {
            let opts = SessionOptions { shape: Some(shape.into()), ..Default::default() };
            let out = run_session(&config, c, &inputs, &opts).expect("scripted session");
            sessions.insert((shape.to_string(), c), out);
        }
    }
    Fixture { config, world, sessions, session_seconds: started.elapsed().as_secs_f64() }
}

// 1. Tree queries agree with brute force.

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_scene(rng: &mut ChaCha8Rng) -> Vec<TriangleMesh> {
    let mut meshes = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let c = random_vec(rng, 1.0);
        let e = Vec3::new(rng.random_range(0.01..0.5), rng.random_range(0.01..0.5), rng.random_range(0.01..0.5));
        meshes.push(TriangleMesh::cuboid(c - e, c + e));
    }
    let mut soup = TriangleMesh::empty();
    for _ in 0..rng.random_range(5..40) {
        let a = random_vec(rng, 1.0);
        let b = a + random_vec(rng, 0.4);
        let c = a + random_vec(rng, 0.4);
        soup.merge(&TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap());
    }
    meshes.push(soup);
    meshes
}

fn random_segment(rng: &mut ChaCha8Rng, tris: &[[Vec3; 3]]) -> Segment {
    match rng.random_range(0..4) {
        // Ends exactly on a triangle: the touching case.
        0 => {
            let t = tris[rng.random_range(0..tris.len())];
            let (u, v) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
            let p = t[0] + (t[1] - t[0]) * u + (t[2] - t[0]) * v;
            Segment::new(random_vec(rng, 1.5), p)
        }
        // Through a vertex.
        1 => {
            let t = tris[rng.random_range(0..tris.len())];
            let a = random_vec(rng, 1.5);
            Segment::new(a, t[0] + (t[0] - a) * rng.random_range(0.0..1.0))
        }
        // Short segments, mostly in free space.
        2 => {
            let a = random_vec(rng, 1.2);
            Segment::new(a, a + random_vec(rng, 0.1))
        }
        _ => Segment::new(random_vec(rng, 1.5), random_vec(rng, 1.5)),
    }
}

fn criterion_1(report: &mut Report) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut pairs, mut disagree, mut hits) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let scene = random_scene(&mut rng);
        let tree = AabbTree::build(&scene);
        let brute = BruteForceIndex::new(&scene);
        let tris: Vec<[Vec3; 3]> = scene.iter().flat_map(|m| m.triangle_soup()).collect();
        for _ in 0..100 {
            let s = random_segment(&mut rng, &tris);
            let expect = brute.segment_hits(&s);
            pairs += 1;
            hits += usize::from(expect);
            if tree.segment_hits(&s) != expect {
                disagree += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report.record(
        1,
        "occlusion tree matches brute force",
        pairs >= 100_000 && disagree == 0 && secs < 60.0,
        format!("{pairs} pairs ({hits} hits), {disagree} disagreements, {secs:.1} s"),
    );
}

// 2. Planner choice matches an independent exhaustive scorer.

fn reference_choice(
    candidates: &[Candidate],
    grid: &CanvasGrid,
    triangles: &[[Vec3; 3]],
    arm: &CameraArm,
    seed: &JointVector,
    psi: f64,
) -> Option<usize> {
    let mut scored: Vec<(f64, f64, [i32; 3], usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let eye = arm.base.transform_point(&c.pose.translation);
            let mut f = 0.0;
            for cell in &grid.cells {
                let d = cell.world - eye;
                let len = d.norm();
                let end = if len <= CELL_CLEARANCE { eye } else { cell.world - d * (CELL_CLEARANCE / len) };
                let seg = Segment::new(eye, end);
                let blocked = triangles.iter().any(|t| segment_hits_triangle(&seg, t, INTERSECTION_TOLERANCE));
                if !blocked {
                    let t_l = grid.time - cell.last_seen;
                    f += if cell.painted { 2.0 - (-0.18 * t_l).exp() } else { 0.1 };
                }
            }
            (f, c.accel.linear.norm(), c.index, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored.into_iter().map(|s| s.3).find(|&i| arm.ik.solve(arm.chain, &candidates[i].pose, seed, psi).is_ok())
}

fn criterion_2(fx: &Fixture, report: &mut Report) {
    let w = &fx.world;
    let ik = SrsAnalyticIk;
    let arm = CameraArm { chain: &w.camera, base: w.camera_base, ik: &ik };
    let cfg = fx.config.planner.clone();
    let view = fx.config.server.stationary_view.pose().unwrap();
    let local = w.camera_base.inverse().compose(&view);
    let seed0 = JointVector::from_vec(vec![0.0, 0.3, 0.0, -1.5, 0.0, 1.2, 0.0]);
    let q0 = [0.0, 0.5, -0.5].iter().find_map(|&p| ik.solve(&w.camera, &local, &seed0, p).ok()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut scenes, mut agree, mut ties) = (0, 0, 0);
    while scenes < 60 {
        // Arm posture, painted cells and extra blockers vary per scene.
        let mut q_draw = JointVector::from_vec(fx.config.server.drawing_home.clone());
        for v in q_draw.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let mut meshes = posed_meshes(&w.drawing, &q_draw, &w.drawing_meshes).unwrap();
        if scenes % 3 == 0 {
            meshes.clear();
        }
        for _ in 0..rng.random_range(0..3) {
            let c = Vec3::new(rng.random_range(0.4..0.6), rng.random_range(-0.1..0.3), rng.random_range(0.05..0.4));
            meshes.push(TriangleMesh::cuboid(c - Vec3::repeat(0.03), c + Vec3::repeat(0.03)));
        }
        let index = AabbTree::build(&meshes);
        let triangles: Vec<[Vec3; 3]> = meshes.iter().flat_map(|m| m.triangle_soup()).collect();
        let mut grid = CanvasGrid::new(w.paper, cfg.sx, cfg.sy);
        let n_paint = rng.random_range(0..300);
        for k in 0..n_paint {
            let p = w.paper.to_world(&Vec3::new(rng.random_range(0.0..0.2), rng.random_range(0.0..0.2), 0.0));
            grid.update(&p, true, None, k as f64 * 0.02);
        }
        let painted_until = n_paint as f64 * 0.02;
        let t_now = painted_until + rng.random_range(0.0..5.0);
        let visible: Vec<bool> = (0..grid.len()).map(|_| rng.random_bool(0.5)).collect();
        grid.update(&Vec3::zeros(), false, Some(&visible), (painted_until + t_now) * 0.5);
        grid.update(&Vec3::zeros(), false, None, t_now);

        let mut pose = local;
        pose.translation += Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let v = |r: &mut ChaCha8Rng, m: f64| Vec3::new(r.random_range(-m..m), r.random_range(-m..m), r.random_range(-m..m));
        let twist = Twist::new(v(&mut rng, cfg.limits.pdot_maxt * 0.5), v(&mut rng, cfg.limits.pdot_maxr * 0.2));
        let state = CameraState { pose, twist };
        let pen_world = w.paper.to_world(&Vec3::new(rng.random_range(0.0..0.2), rng.random_range(0.0..0.2), 0.0));
        let pen = w.camera_base.inverse().transform_point(&pen_world);
        let set = gen_candidates(&state, &cfg.limits, &pen, cfg.dt, (cfg.standoff_min, cfg.standoff_max), t_now);
        if set.candidates.is_empty() {
            continue;
        }
        let seed = q0.clone();
        let psi = avatar_core::arm::arm_angle(&w.camera, &seed).unwrap_or(0.0);
        let got = select_next(&set, &grid, &index, &cfg, &arm, &seed).ok().map(|s| s.chosen);
        let want = reference_choice(&set.candidates, &grid, &triangles, &arm, &seed, psi);
        scenes += 1;
        if let Ok(sel) = select_next(&set, &grid, &index, &cfg, &arm, &seed) {
            let best = sel.scores.iter().cloned().fold(f64::MIN, f64::max);
            if sel.scores.iter().filter(|&&s| s == best).count() > 1 {
                ties += 1;
            }
        }
        if got == want {
            agree += 1;
        }
    }
    report.record(
        2,
        "planner argmax matches exhaustive scorer",
        agree == scenes,
        format!("{agree}/{scenes} scenes agree ({ties} with tied top scores)"),
    );
}

// 3. AU beats ST on every shape.

fn criterion_3(fx: &Fixture, report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for shape in SHAPES {
        let st = fx.sessions[&(shape.to_string(), Condition::Stationary)].metrics.mean_viewpoint_quality;
        let au = fx.sessions[&(shape.to_string(), Condition::Autonomous)].metrics.mean_viewpoint_quality;
        ok &= au >= st + 0.05;
        parts.push(format!("{shape} AU {au:.3} ST {st:.3}"));
    }
    let secs = fx.session_seconds;
    ok &= secs < 300.0;
    report.record(3, "AU viewpoint quality exceeds ST by 0.05", ok, format!("{}; {secs:.0} s for all sessions", parts.join(", ")));
}

// 4. Planner motion within limits.

fn ticks(log: &ReplayLog) -> Vec<PlannerTick> {
    log.events
        .iter()
        .filter_map(|e| match e {
            ReplayEvent::Planner { tick: Some(t), .. } => Some((**t).clone()),
            _ => None,
        })
        .collect()
}

fn criterion_4(fx: &Fixture, report: &mut Report) {
    let lim = fx.config.planner.limits;
    let dt = fx.config.planner.dt;
    let tol = 1e-6;
    let over = |v: &Vec3, m: f64| v.iter().any(|c| c.abs() > m + tol);
    let (mut pairs, mut violations) = (0usize, Vec::new());
    for shape in SHAPES {
        let ts = ticks(&fx.sessions[&(shape.to_string(), Condition::Autonomous)].log);
        for (k, t) in ts.iter().enumerate() {
            let mut bad = over(&t.twist.linear, lim.pdot_maxt)
                || over(&t.twist.angular, lim.pdot_maxr)
                || over(&t.accel.linear, lim.pddot_maxt)
                || over(&t.accel.angular, lim.pddot_maxr);
            if k > 0 {
                let p = &ts[k - 1];
                pairs += 1;
                let vel = (t.pose.translation - p.pose.translation) / dt;
                let rot = rotation_vector(&(t.pose.rotation * p.pose.rotation.inverse())) / dt;
                let acc = (t.twist.linear - p.twist.linear) / dt;
                let alpha = (t.twist.angular - p.twist.angular) / dt;
                bad |= over(&vel, lim.pdot_maxt)
                    || over(&rot, lim.pdot_maxr)
                    || over(&acc, lim.pddot_maxt)
                    || over(&alpha, lim.pddot_maxr);
            }
            if bad {
                violations.push(format!("{shape}@{:.3}", t.t));
            }
        }
    }
    report.record(
        4,
        "camera motion limits",
        violations.is_empty() && pairs > 0,
        format!("{pairs} consecutive pose pairs, {} violations {:?}", violations.len(), violations.iter().take(5).collect::<Vec<_>>()),
    );
}

// 5. Memory weight.

fn criterion_5(report: &mut Report) {
    let cfg = PlannerConfig::default();
    let mut worst: f64 = 0.0;
    let mut bounds = true;
    for k in 0..=60_000 {
        let t = k as f64 * 1e-3;
        let w = cell_weight(true, t, &cfg);
        worst = worst.max((w - (2.0 - (-0.18 * t).exp())).abs());
        bounds &= (1.0..2.0).contains(&w);
    }
    let unpainted = cell_weight(false, 12.0, &cfg) == 0.1 && cell_weight(false, 0.0, &cfg) == 0.1;
    report.record(
        5,
        "memory weight",
        worst <= 1e-12 && bounds && unpainted,
        format!("max error {worst:.1e} over 60001 samples, bounds hold: {bounds}, unpainted exact: {unpainted}"),
    );
}

// 6. Force tracking on a constant-pressure stroke.

fn criterion_6(fx: &Fixture, report: &mut Report) {
    let out = &fx.sessions[&("line".to_string(), Condition::Stationary)];
    let fs = fx.config.gains.force_scale;
    let pressure = ScriptParams::default().pressure;
    let target = fs.f_min + pressure * (fs.f_max - fs.f_min);
    let stroke_end = out
        .log
        .events
        .iter()
        .filter_map(|e| match e {
            ReplayEvent::Input { t, message: ClientMessage::TabletSample(s), .. } if s.pressure > 0.0 => Some(*t),
            _ => None,
        })
        .fold(0.0, f64::max);
    let samples: Vec<(f64, bool, f64)> = out
        .log
        .events
        .iter()
        .filter_map(|e| match e {
            ReplayEvent::Pen { t, contact, normal_force, .. } => Some((*t, *contact, *normal_force)),
            _ => None,
        })
        .collect();
    let Some(onset) = samples.iter().find(|s| s.1).map(|s| s.0) else {
        report.record(6, "force tracking", false, "pen never touched the paper".into());
        return;
    };
    let window: Vec<_> = samples.iter().filter(|s| s.0 >= onset && s.0 <= stroke_end).collect();
    let inside = |f: f64| (f - target).abs() <= 0.05 * target;
    // First time after which every sample up to the end of the stroke is in band.
    let settle = window.iter().rposition(|s| !inside(s.2)).map_or(onset, |i| window.get(i + 1).map_or(f64::INFINITY, |s| s.0));
    let settling = settle - onset;
    let held = window.iter().filter(|s| s.0 >= settle).count();
    report.record(
        6,
        "force tracking",
        settling < 1.0 && held > 0 && stroke_end - settle > 1.0,
        format!(
            "target {target:.2} N, contact at {onset:.3} s, within 5% after {settling:.3} s, held for {:.2} s until lift",
            stroke_end - settle
        ),
    );
}

// 7. Controller zero cases.

fn criterion_7(fx: &Fixture, report: &mut Report) {
    let chain = &fx.world.drawing;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_imp, mut worst_force): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let mut q = JointVector::from_vec(fx.config.server.drawing_home.clone());
        for v in q.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let state = JointState::at_rest(q.clone());
        let pose = fk(chain, &q).unwrap().ee;
        let desired = DesiredMotion::hold(pose);
        let tau = impedance_torque(chain, &state, &desired, &ImpedanceGains::default(), &AxisSelection::all_impedance()).unwrap();
        worst_imp = worst_imp.max(tau.tau.amax());

        let f_des = Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let sample = ForceSample::steady(f_des, f_des);
        let (tau_c, _) = force_torque(
            chain,
            &q,
            &sample,
            &ForceIntegrator::default(),
            &ForceGains::default(),
            &AxisSelection::all_force(),
            1e-3,
        )
        .unwrap();
        let expect = jacobian(chain, &q).unwrap().transpose() * f_des;
        worst_force = worst_force.max((tau_c.tau - expect).amax());
    }
    report.record(
        7,
        "controller zero cases",
        worst_imp <= 1e-12 && worst_force <= 1e-12,
        format!("max |tau_imp| {worst_imp:.1e}, max |tau_c - J^T f_des| {worst_force:.1e} over 100 postures"),
    );
}

// 8. Dynamics sanity.

fn criterion_8(fx: &Fixture, report: &mut Report) {
    let chain = &fx.world.drawing;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let home = JointVector::from_vec(fx.config.server.drawing_home.clone());
    let (mut asym, mut jac_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let q = home.map(|v| v + rng.random_range(-0.8..0.8));
        let m = mass_matrix(chain, &q).unwrap();
        asym = asym.max((&m - m.transpose()).amax());
        let j = jacobian(chain, &q).unwrap();
        let p0 = fk(chain, &q).unwrap().ee;
        let h = 1e-6;
        for i in 0..q.len() {
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            let (pp, pm) = (fk(chain, &qp).unwrap().ee, fk(chain, &qm).unwrap().ee);
            let lin = (pp.translation - pm.translation) / (2.0 * h);
            let ang = (rotation_vector(&(pp.rotation * p0.rotation.inverse()))
                - rotation_vector(&(pm.rotation * p0.rotation.inverse())))
                / (2.0 * h);
            let col = j.column(i);
            for r in 0..3 {
                jac_err = jac_err.max((col[r] - lin[r]).abs()).max((col[r + 3] - ang[r]).abs());
            }
        }
    }
    // Torque-free apart from gravity compensation: kinetic energy is conserved.
    let dt = 1e-3;
    let seconds = 5.0;
    let mut q = home.clone();
    let mut qd = JointVector::from_vec(vec![0.3, -0.2, 0.25, 0.2, -0.3, 0.2, 0.3]);
    let e0 = kinetic_energy(chain, &q, &qd).unwrap();
    for _ in 0..(seconds / dt) as usize {
        let g = gravity_torques(chain, &q).unwrap();
        let qdd = forward_dynamics(chain, &q, &qd, &g).unwrap();
        qd += qdd * dt;
        q += &qd * dt;
    }
    let drift = (kinetic_energy(chain, &q, &qd).unwrap() - e0).abs() / seconds;
    report.record(
        8,
        "dynamics sanity",
        asym < 1e-9 && jac_err < 1e-5 && drift < 1e-3,
        format!("mass asymmetry {asym:.1e}, jacobian FD error {jac_err:.1e}, energy drift {drift:.1e} J/s"),
    );
}

// 9. Shape distances of replayed reference strokes.

fn criterion_9(fx: &Fixture, report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for shape in SHAPES {
        let d = &fx.sessions[&(shape.to_string(), Condition::Stationary)].metrics.shape_distance;
        let own = d[shape];
        let nearest_other = d.iter().filter(|(k, _)| k.as_str() != shape).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        let pass = own < 0.05 && own < nearest_other;
        ok &= pass;
        parts.push(format!("{shape} own {own:.4} nearest other {nearest_other:.4}{}", if pass { "" } else { " (fails)" }));
    }
    // For reference only: the same check on the commanded tablet strokes,
    // before any tracking error.
    let refs = ReferenceSet::bundled();
    let mut commanded = Vec::new();
    for shape in SHAPES {
        let samples = shape_samples(refs.get(shape).unwrap(), &ScriptParams::default());
        let mut strokes: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut pen_down = false;
        for s in &samples {
            if s.pressure > 0.0 {
                if !pen_down {
                    strokes.push(Vec::new());
                }
                strokes.last_mut().unwrap().push((s.p_tx, s.p_ty));
            }
            pen_down = s.pressure > 0.0;
        }
        let d = refs.distances(&strokes, RASTER_RESOLUTION).unwrap();
        commanded.push(format!("{shape} {:.4}", d[shape]));
    }
    report.record(
        9,
        "shape distance ordering",
        ok,
        format!("simulated pen: {}; commanded strokes (not graded): {}", parts.join(", "), commanded.join(", ")),
    );
}

// 10. Planner tick budget.

fn tick_times(fx: &Fixture, levels: usize) -> (usize, f64, f64) {
    let w = &fx.world;
    let q_draw = JointVector::from_vec(fx.config.server.drawing_home.clone());
    let meshes: Vec<TriangleMesh> =
        posed_meshes(&w.drawing, &q_draw, &w.drawing_meshes).unwrap().iter().map(|m| m.subdivided(levels)).collect();
    let tree = AabbTree::build(&meshes);
    let mut grid = CanvasGrid::new(w.paper, fx.config.planner.sx, fx.config.planner.sy);
    for k in 0..600 {
        let (i, j) = (k % 32, (k / 32) % 32);
        let p = w.paper.to_world(&Vec3::new((i as f64 + 0.5) / 32.0 * 0.2, (j as f64 + 0.5) / 32.0 * 0.2, 0.0));
        grid.update(&p, true, None, k as f64 * 0.01);
    }
    let ik = SrsAnalyticIk;
    let view = fx.config.server.stationary_view.pose().unwrap();
    let local = w.camera_base.inverse().compose(&view);
    let seed = JointVector::from_vec(vec![0.0, 0.3, 0.0, -1.5, 0.0, 1.2, 0.0]);
    let q_cam = [0.0, 0.5, -0.5].iter().find_map(|&p| ik.solve(&w.camera, &local, &seed, p).ok()).unwrap();
    let mut planner = ViewPlanner::new(fx.config.planner.clone(), &w.camera, q_cam).unwrap();
    let arm = CameraArm { chain: &w.camera, base: w.camera_base, ik: &ik };
    let pen = w.paper.center();
    let mut ms = Vec::new();
    for k in 0..200 {
        let t0 = Instant::now();
        let tick = planner.tick(&grid, &pen, &tree, &arm, 6.0 + k as f64 * 0.033);
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
        assert_eq!(tick.candidates.max(125), 125);
    }
    ms.sort_by(f64::total_cmp);
    (tree.triangle_count(), ms[ms.len() / 2], ms[ms.len() * 99 / 100])
}

fn criterion_10(fx: &Fixture, report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for levels in [0, 2] {
        let (tris, median, p99) = tick_times(fx, levels);
        ok &= tris <= 10_000 && median < 33.0 && p99 < 50.0;
        parts.push(format!("{tris} triangles: median {median:.1} ms, p99 {p99:.1} ms"));
    }
    report.record(10, "planner tick budget", ok, parts.join("; "));
}

// 11. Determinism of replays.

fn criterion_11(fx: &Fixture, report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in [Condition::Stationary, Condition::Autonomous] {
        let log = &fx.sessions[&("triangle".to_string(), c)].log;
        let text = log.to_jsonl();
        let parsed = ReplayLog::parse(&text).unwrap();
        let a = metrics_json(&replay_log(&parsed, None, None).unwrap().metrics);
        let b = metrics_json(&replay_log(&parsed, None, None).unwrap().metrics);
        let same = a.as_bytes() == b.as_bytes();
        ok &= same;
        parts.push(format!("{c}: {} bytes, identical: {same}", a.len()));
    }
    report.record(11, "replay determinism", ok, parts.join(", "));
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes arguments through; any filter that is
    // not "acceptance" skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut report = Report { results: Vec::new() };
    criterion_1(&mut report);
    let fx = fixture();
    criterion_2(&fx, &mut report);
    criterion_3(&fx, &mut report);
    criterion_4(&fx, &mut report);
    criterion_5(&mut report);
    criterion_6(&fx, &mut report);
    criterion_7(&fx, &mut report);
    criterion_8(&fx, &mut report);
    criterion_9(&fx, &mut report);
    criterion_10(&fx, &mut report);
    criterion_11(&fx, &mut report);
    let failed: Vec<u32> = report.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        report.results.len() - failed.len(),
        report.results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
