use advsim::geometry::{OrientedBox, Vec2};
use advsim::kinematics::KinematicLimits;
use advsim::planner::driver::{
    apply_command, av_rule_planner_step, DriverParams, Neighbor, VehicleState,
};
use advsim::scenario::AgentState;

const DT: f64 = 0.1;
const LEN: f64 = 4.5;
const WIDTH: f64 = 2.0;
const LANE: f64 = 3.5;

fn route() -> Vec<Vec2> {
    vec![Vec2::new(-50.0, 0.0), Vec2::new(1000.0, 0.0)]
}

#[test]
fn empty_road_tracks_route_at_desired_speed() {
    let params = DriverParams::default();
    let limits = KinematicLimits::default();
    let mut av = VehicleState {
        pose: AgentState::new(0.0, 0.4, 0.0),
        speed: 6.0,
    };
    for step in 0..300 {
        let cmd = av_rule_planner_step(&av, LEN, &route(), LANE, &[], &params, &limits);
        av = apply_command(&av, &cmd, DT, &limits);
        assert!(av.pose.y.abs() <= 0.5, "step {step}: lateral {}", av.pose.y);
    }
    assert!(
        (av.speed - params.desired_speed).abs() < 0.1,
        "speed {}",
        av.speed
    );
}

#[test]
fn cut_in_triggers_braking_within_one_tick() {
    let params = DriverParams::default();
    let limits = KinematicLimits::default();
    let mut av = VehicleState {
        pose: AgentState::new(0.0, 0.0, 0.0),
        speed: 10.0,
    };
    // Slower vehicle in the next lane, steering across the lane line.
    let vel = Vec2::new(7.0, -2.5);
    let mut ov = Vec2::new(14.0, LANE);
    let mut min_accel = f64::INFINITY;
    for _ in 0..5 {
        let n = Neighbor {
            pose: AgentState::from_position(ov, vel.y.atan2(vel.x)),
            velocity: vel,
            length: LEN,
            width: WIDTH,
        };
        let cmd = av_rule_planner_step(&av, LEN, &route(), LANE, &[n], &params, &limits);
        min_accel = min_accel.min(cmd.accel);
        av = apply_command(&av, &cmd, DT, &limits);
        ov += vel * DT;
    }
    assert!(min_accel < 0.0, "no braking: {min_accel}");
}

#[test]
fn stops_before_stationary_obstacle() {
    let params = DriverParams::default();
    let limits = KinematicLimits::default();
    let mut av = VehicleState {
        pose: AgentState::new(0.0, 0.0, 0.0),
        speed: 10.0,
    };
    let obstacle = Neighbor {
        pose: AgentState::new(40.0, 0.0, 0.0),
        velocity: Vec2::zeros(),
        length: LEN,
        width: WIDTH,
    };
    let obox = OrientedBox::new(obstacle.pose.position(), 0.0, LEN, WIDTH);
    for step in 0..400 {
        let cmd = av_rule_planner_step(&av, LEN, &route(), LANE, &[obstacle], &params, &limits);
        assert!(cmd.accel >= -limits.a_max);
        av = apply_command(&av, &cmd, DT, &limits);
        let abox = OrientedBox::new(av.pose.position(), av.pose.heading, LEN, WIDTH);
        assert!(!abox.overlaps(&obox), "overlap at step {step}");
    }
    assert!(av.speed < 0.05, "still moving at {}", av.speed);
}
