//! SVG rendering of a rollout over its map.

use crate::geometry::OrientedBox;
use crate::scenario::{Role, Scenario};
use crate::sim::RolloutLog;
use crate::{Error, Result};
use std::fmt::Write as _;

pub const AV_COLOR: &str = "#2e9e44";
pub const OV_COLOR: &str = "#d62728";
pub const BV_COLOR: &str = "#1f5fbf";
const MARGIN: f64 = 10.0;
/// Footprints are drawn every this many steps, plus the final step.
const STRIDE: usize = 5;

fn color(role: Role) -> &'static str {
    match role {
        Role::Av => AV_COLOR,
        Role::Ov => OV_COLOR,
        Role::Bv => BV_COLOR,
    }
}

/// Lanes, agent footprints over time and a collision marker. World
/// coordinates are kept inside a y-flipped group, so marker attributes are
/// the logged coordinates.
pub fn render_svg(log: &RolloutLog, scenario: &Scenario) -> Result<String> {
    let first = log
        .steps
        .first()
        .ok_or(Error::Empty("rollout log has no steps"))?;
    let mut log_ids: Vec<&String> = first.agents.keys().collect();
    let mut scen_ids: Vec<&String> = scenario.agents.iter().map(|a| &a.id).collect();
    log_ids.sort();
    scen_ids.sort();
    if log_ids != scen_ids {
        return Err(Error::InvalidInput(format!(
            "log agents {log_ids:?} do not match scenario agents {scen_ids:?}"
        )));
    }

    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for s in &log.steps {
        for p in s.agents.values() {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
    }
    let (x0, y0, x1, y1) = (x0 - MARGIN, y0 - MARGIN, x1 + MARGIN, y1 + MARGIN);
    let (w, h) = (x1 - x0, y1 - y0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.3} {:.3} {:.3} {:.3}" width="{:.0}" height="{:.0}">"#,
        x0,
        -y1,
        w,
        h,
        w * 8.0,
        h * 8.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.3}" y="{:.3}" width="{w:.3}" height="{h:.3}" fill="#f4f4f4"/>"##,
        -y1
    );
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)">"#);
    let _ = writeln!(svg, r#"<g id="road">"#);
    for seg in scenario.map.boundary() {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#555555" stroke-width="0.15"/>"##,
            seg.a.x, seg.a.y, seg.b.x, seg.b.y
        );
    }
    for lane in &scenario.map.lanes {
        let pts: Vec<String> = lane
            .centerline()
            .iter()
            .map(|p| format!("{:.3},{:.3}", p.x, p.y))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#aaaaaa" stroke-width="0.1" stroke-dasharray="1 1"/>"##,
            pts.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");

    let n = log.steps.len();
    for agent in &scenario.agents {
        let c = color(agent.role);
        let _ = writeln!(
            svg,
            r#"<g id="{}" class="{}">"#,
            agent.id,
            agent.role.as_str()
        );
        let mut idx: Vec<usize> = (0..n).step_by(STRIDE).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        for (k, &i) in idx.iter().enumerate() {
            let p = log.steps[i].agents[&agent.id];
            let b = OrientedBox::new(
                crate::geometry::Vec2::new(p[0], p[1]),
                p[2],
                agent.length,
                agent.width,
            );
            let pts: Vec<String> = b
                .corners()
                .iter()
                .map(|q| format!("{:.3},{:.3}", q.x, q.y))
                .collect();
            let opacity = 0.15 + 0.85 * (k + 1) as f64 / idx.len() as f64;
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{c}" fill-opacity="{opacity:.3}" stroke="{c}" stroke-width="0.05"/>"#,
                pts.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    if let Some(col) = &log.collision {
        let _ = writeln!(
            svg,
            r##"<circle id="collision" cx="{:.3}" cy="{:.3}" r="1.500" fill="none" stroke="#000000" stroke-width="0.3"/>"##,
            col.av_position[0], col.av_position[1]
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{synth_scenario, Template};
    use crate::sim::{run_scenario, IntentionMode, SimConfig};

    #[test]
    fn colors_ids_and_determinism() {
        let s = synth_scenario(0, Template::AdjacentLane);
        let cfg = SimConfig {
            intention_mode: IntentionMode::None,
            ..SimConfig::default()
        };
        let log = run_scenario(&s, &cfg).unwrap();
        let a = render_svg(&log, &s).unwrap();
        assert_eq!(a, render_svg(&log, &s).unwrap());
        assert!(a.contains(AV_COLOR) && a.contains(OV_COLOR));
        assert!(!a.contains("id=\"collision\""));
        let mut renamed = s.clone();
        renamed.agents[0].id = "someone-else".into();
        assert!(render_svg(&log, &renamed).is_err());
    }
}
