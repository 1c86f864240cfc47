use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

const ROOM: &str = "heading=0
#########
#.......#
#..r....#
#S...G..#
#.....b.#
#########
";

fn room() -> GridMap {
    parse_map(ROOM).unwrap()
}

fn open_map(w: usize, h: usize, start: (usize, usize), heading: u8, goal: (usize, usize)) -> GridMap {
    GridMap::new(vec![vec![Cell::Free; w]; h], start, heading, goal).unwrap()
}

#[test]
fn parse_room() {
    let m = room();
    assert_eq!((m.width(), m.height()), (9, 6));
    assert_eq!(m.start(), AgentPose::new(1.5, 2.5, 0));
    assert_eq!(m.goal(), (5.5, 2.5));
    assert_eq!(m.cell(3, 3), Some(Cell::Landmark(Color::Red)));
    assert_eq!(m.cell(0, 0), Some(Cell::Wall));
    assert_eq!(m.landmarks().len(), 2);
    assert_eq!(parse_map(&m.to_text()).unwrap(), m);
}

#[test]
fn parse_errors() {
    let cases = [
        "",
        "#S.G#\n",
        "heading=24\n#SG#\n",
        "heading=x\n#SG#\n",
        "heading=1\n",
        "heading=1\n#S.#\n#..#\n",
        "heading=1\n#SG#\n#.#\n",
        "heading=1\n#SGS#\n",
        "heading=1\n#SGz#\n",
    ];
    for text in cases {
        assert!(matches!(parse_map(text), Err(EnvError::Parse { .. })), "{text:?}");
    }
}

#[test]
fn forward_step_along_x() {
    let m = open_map(5, 5, (2, 2), 0, (4, 4));
    let out = step_env(&m, AgentPose::new(2.0, 2.0, 0), Action::Forward);
    assert_eq!(out.pose, AgentPose::new(2.25, 2.0, 0));
    assert!(!out.blocked);
}

#[test]
fn full_rotation_and_right_wraps() {
    let m = open_map(3, 3, (1, 1), 5, (2, 2));
    let mut p = m.start();
    for _ in 0..24 {
        p = step_env(&m, p, Action::Left).pose;
    }
    assert_eq!(p, m.start());
    let r = step_env(&m, AgentPose::new(1.5, 1.5, 0), Action::Right).pose;
    assert_eq!(r.heading, 23);
}

#[test]
fn forward_into_wall_is_blocked() {
    let m = room();
    // facing -x next to the west wall
    let p = AgentPose::new(1.0, 2.5, 12);
    let out = step_env(&m, p, Action::Forward);
    assert!(out.blocked);
    assert_eq!(out.pose, p);
    // leaving the grid also blocks
    let edge = open_map(2, 2, (0, 0), 12, (1, 1));
    assert!(step_env(&edge, AgentPose::new(0.0, 0.5, 12), Action::Forward).blocked);
}

#[test]
fn start_at_goal_plans_stop() {
    let m = open_map(3, 3, (1, 1), 0, (1, 1));
    assert_eq!(expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap(), vec![Action::Stop]);
}

#[test]
fn aligned_goal_one_unit_ahead() {
    let m = open_map(6, 3, (1, 1), 0, (2, 1));
    let plan = expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
    assert_eq!(plan, vec![Action::Forward, Action::Forward, Action::Forward, Action::Stop]);
    let mut p = m.start();
    for &a in &plan {
        p = step_env(&m, p, a).pose;
    }
    assert!((p.distance_to(m.goal()) - 0.25).abs() < 1e-12);
}

#[test]
fn planner_prefers_forward_then_left_on_ties() {
    // facing +y with the goal straight behind: turning either way costs 12;
    // Left is expanded before Right
    let m = open_map(3, 8, (1, 5), 6, (1, 1));
    let plan = expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
    assert_eq!(plan[0], Action::Left);
    assert_eq!(plan.iter().filter(|&&a| a == Action::Left).count(), 12);
}

#[test]
fn unsolvable_and_off_lattice() {
    let m = parse_map("heading=0\n#####\n#S#G#\n#####\n").unwrap();
    assert_eq!(expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS), Err(EnvError::Unsolvable));
    let open = open_map(4, 4, (0, 0), 0, (3, 3));
    assert_eq!(
        expert_plan(&open, AgentPose::new(0.3, 0.5, 0), open.goal(), SUCCESS_RADIUS),
        Err(EnvError::OffLattice)
    );
}

#[test]
fn expert_plan_replay_never_blocks_and_succeeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let m = generate_map(&GeneratorConfig::default(), &mut rng).unwrap();
        let plan = expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
        let mut p = m.start();
        for &a in &plan {
            let out = step_env(&m, p, a);
            assert!(!out.blocked);
            p = out.pose;
        }
        assert!(p.distance_to(m.goal()) <= SUCCESS_RADIUS);
        assert_eq!(*plan.last().unwrap(), Action::Stop);
    }
}

#[test]
fn render_is_deterministic_and_view_dependent() {
    let m = room();
    let p = AgentPose::new(2.5, 2.5, 0);
    assert_eq!(render_obs(&m, p), render_obs(&m, p));
    let back = AgentPose::new(2.5, 2.5, 12);
    assert_ne!(render_obs(&m, p), render_obs(&m, back));
    assert_eq!(render_obs(&m, p).dims(), [16, 16, 3]);
}

#[test]
fn unbounded_view_is_all_max_distance() {
    // nothing blocks within the grid: every column encodes a miss
    let m = open_map(30, 30, (2, 15), 0, (2, 16));
    let obs = render_obs(&m, m.start());
    assert!(obs.pixels().iter().all(|&v| v == 0.0));
}

#[test]
fn goal_strip_marks_columns_seeing_the_goal() {
    let m = room();
    let obs = render_obs(&m, m.start());
    // centre columns look straight down the row that holds the goal
    assert_eq!(obs.get(15, 7, 1), 1.0);
    assert_eq!(obs.get(15, 8, 1), 1.0);
    let away = render_obs(&m, AgentPose::new(1.5, 2.5, 12));
    assert!((0..16).all(|c| away.get(15, c, 1) != 1.0));
}

#[test]
fn instructions() {
    let m = room();
    let plan = expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
    let a = gen_instruction(&m, &plan, &mut ChaCha8Rng::seed_from_u64(1));
    let b = gen_instruction(&m, &plan, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(a, b);
    assert!(a.iter().all(|&t| (t as usize) < VOCAB_SIZE));
    assert!(VOCAB_SIZE <= 64);
    let text = decode_instruction(&a);
    assert!(text.contains("forward") && text.ends_with("stop at the goal"), "{text}");
    assert_eq!(decode_instruction(&gen_instruction(&m, &[Action::Stop], &mut ChaCha8Rng::seed_from_u64(2))), "stop");
}

#[test]
fn instructions_mention_turns_and_landmarks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut saw_turn = false;
    let mut saw_pillar = false;
    for _ in 0..30 {
        let m = generate_map(&GeneratorConfig::default(), &mut rng).unwrap();
        let plan = expert_plan(&m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
        let text = decode_instruction(&gen_instruction(&m, &plan, &mut rng));
        saw_turn |= text.contains("turn");
        saw_pillar |= text.contains("pillar");
    }
    assert!(saw_turn && saw_pillar);
}

fn expert_run(m: &GridMap) -> (EpisodeResult, EvalReference) {
    let reference = EvalReference::from_map(m, SUCCESS_RADIUS).unwrap();
    let plan = expert_plan(m, m.start(), m.goal(), SUCCESS_RADIUS).unwrap();
    let mut policy = ScriptedPolicy::new(plan);
    let r = run_episode(&mut policy, m, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap();
    (r, reference)
}

#[test]
fn expert_policy_scores_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut rs, mut es) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let m = generate_map(&GeneratorConfig::default(), &mut rng).unwrap();
        let (r, e) = expert_run(&m);
        assert!(r.success);
        assert_eq!(r.path.len(), r.steps + 1);
        rs.push(r);
        es.push(e);
    }
    let mt = compute_metrics(&rs, &es).unwrap();
    assert_eq!((mt.sr, mt.spl, mt.osr, mt.ndtw), (1.0, 1.0, 1.0, 1.0));
    assert!(mt.ne <= SUCCESS_RADIUS);
}

#[test]
fn always_stop_fails_unless_at_goal() {
    let m = room();
    let mut p = ScriptedPolicy::always(Action::Stop);
    let r = run_episode(&mut p, &m, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap();
    assert!(!r.success && r.stop_issued);
    assert_eq!(r.steps, 1);
    let at_goal = open_map(3, 3, (1, 1), 0, (1, 1));
    assert!(run_episode(&mut p, &at_goal, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap().success);
}

#[test]
fn stationary_agent_metrics() {
    let m = room();
    let mut p = ScriptedPolicy::always(Action::Left);
    let r = run_episode(&mut p, &m, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap();
    assert_eq!(r.steps, MAX_STEPS);
    assert!(!r.stop_issued);
    let e = EvalReference::from_map(&m, SUCCESS_RADIUS).unwrap();
    let mt = compute_metrics(&[r], &[e]).unwrap();
    assert_eq!((mt.sr, mt.spl), (0.0, 0.0));
    assert_eq!(mt.ne, 4.0);
}

#[test]
fn collision_fails_the_episode() {
    let m = parse_map("heading=12\n#####\n#S.G#\n#####\n").unwrap();
    let mut p = ScriptedPolicy::new(vec![Action::Forward; 8]);
    let r = run_episode(&mut p, &m, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap();
    assert!(r.collided && !r.success);
}

#[test]
fn two_episode_hand_case() {
    let good = open_map(6, 3, (1, 1), 0, (2, 1));
    let (r1, e1) = expert_run(&good);
    let mut stop = ScriptedPolicy::always(Action::Stop);
    let r2 = run_episode(&mut stop, &good, &[0], MAX_STEPS, SUCCESS_RADIUS).unwrap();
    let mt = compute_metrics(&[r1, r2], &[e1.clone(), e1]).unwrap();
    assert_eq!(mt.sr, 0.5);
    assert_eq!(mt.spl, 0.5);
    assert_eq!(mt.episodes, 2);
    assert!(compute_metrics(&[], &[]).is_err());
}

#[test]
fn ndtw_of_identical_paths_is_one() {
    let p = [(0.0, 0.0), (0.25, 0.0), (0.5, 0.0)];
    assert_eq!(ndtw(&p, &p, SUCCESS_RADIUS), 1.0);
    // one point off by 0.1 along the only alignment
    let q = [(0.0, 0.0), (0.25, 0.1), (0.5, 0.0)];
    assert!((dtw_distance(&p, &q) - 0.1).abs() < 1e-12);
}

#[test]
fn strata_partition_episodes() {
    assert_eq!(Stratum::of_steps(19), Stratum::Short);
    assert_eq!(Stratum::of_steps(20), Stratum::Medium);
    assert_eq!(Stratum::of_steps(60), Stratum::Medium);
    assert_eq!(Stratum::of_steps(61), Stratum::Long);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut rs, mut es) = (Vec::new(), Vec::new());
    for _ in 0..12 {
        let m = generate_map(&GeneratorConfig::default(), &mut rng).unwrap();
        let (r, e) = expert_run(&m);
        rs.push(r);
        es.push(e);
    }
    let rows = stratify(&rs, &es).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1..].iter().map(|r| r.episodes).sum::<usize>(), rows[0].episodes);
}

#[test]
fn generator_is_seeded() {
    let cfg = GeneratorConfig::default();
    let a = generate_map(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = generate_map(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    let colors: std::collections::HashSet<_> = a.landmarks().into_iter().map(|(_, c)| c).collect();
    assert!(colors.len() >= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_preserves_what_it_should(x in 1usize..8, y in 1usize..8, h in 0u8..24, a in 0usize..4) {
        let m = open_map(10, 10, (x, y), h, (9, 9));
        let p = m.start();
        let action = Action::from_index(a).unwrap();
        let q = step_env(&m, p, action).pose;
        match action {
            Action::Forward | Action::Stop => prop_assert_eq!(q.heading, p.heading),
            _ => prop_assert_eq!((q.x, q.y), (p.x, p.y)),
        }
        if action == Action::Stop {
            prop_assert_eq!(q, p);
        }
    }

    #[test]
    fn ndtw_self_similarity(pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..20)) {
        prop_assert_eq!(ndtw(&pts, &pts, SUCCESS_RADIUS), 1.0);
    }

    #[test]
    fn parse_map_never_panics(s in "\\PC{0,80}") {
        let _ = parse_map(&s);
    }
}
