//! Line chart of post-recovery accuracy per strategy.

use std::fmt::Write;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const LEFT: f64 = 60.0;
pub const RIGHT: f64 = 170.0;
pub const TOP: f64 = 30.0;
pub const BOTTOM: f64 = 50.0;

const COLORS: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

/// y pixel of an accuracy: 0 maps to the bottom axis, 1 to the top.
pub fn y_for(accuracy: f64) -> f64 {
    let bottom = HEIGHT - BOTTOM;
    bottom - accuracy.clamp(0.0, 1.0) * (bottom - TOP)
}

pub fn x_for(epoch: usize, max_epoch: usize) -> f64 {
    LEFT + epoch as f64 / max_epoch.max(1) as f64 * (WIDTH - LEFT - RIGHT)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One polyline per `(label, accuracies by epoch)` curve, with axes and a
/// legend.
pub fn emit_recovery_svg(curves: &[(String, Vec<f64>)]) -> Vec<u8> {
    let max_epoch = curves
        .iter()
        .map(|(_, c)| c.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let plot_right = WIDTH - RIGHT;
    let bottom = HEIGHT - BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">Failure recovery strategy comparison</text>"#,
        (LEFT + plot_right) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{bottom}" x2="{plot_right}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}" stroke="black"/>"#
    );
    for tick in 0..=5 {
        let acc = tick as f64 / 5.0;
        let y = y_for(acc);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{acc:.1}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let step = (max_epoch / 10).max(1);
    for e in (0..=max_epoch).step_by(step) {
        let x = x_for(e, max_epoch);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{e}</text>"#,
            bottom + 4.0,
            bottom + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">post-recovery epoch</text>"#,
        (LEFT + plot_right) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#,
        (TOP + bottom) / 2.0,
        (TOP + bottom) / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(e, &a)| format!("{:.2},{:.2}", x_for(e, max_epoch), y_for(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            plot_right + 12.0,
            plot_right + 32.0,
            plot_right + 38.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curves() -> Vec<(String, Vec<f64>)> {
        vec![
            ("retrain_scratch".into(), vec![0.1, 0.5, 0.8]),
            ("reinstate_historical".into(), vec![0.6, 0.8]),
            ("federated_push".into(), vec![0.9]),
        ]
    }

    #[test]
    fn one_polyline_per_curve() {
        let svg = String::from_utf8(emit_recovery_svg(&curves())).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("federated_push"));
    }

    #[test]
    fn accuracy_axis_is_affine() {
        assert_eq!(y_for(0.0), HEIGHT - BOTTOM);
        assert_eq!(y_for(1.0), TOP);
        assert!((y_for(0.5) - (HEIGHT - BOTTOM + TOP) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn well_formed_xml() {
        let mut c = curves();
        c.push(("a<b & \"c\"".into(), vec![0.3]));
        let svg = emit_recovery_svg(&c);
        let mut reader = quick_xml::Reader::from_reader(svg.as_slice());
        let mut buf = Vec::new();
        let mut depth = 0i32;
        loop {
            match reader.read_event_into(&mut buf).expect("well-formed") {
                quick_xml::events::Event::Start(_) => depth += 1,
                quick_xml::events::Event::End(_) => depth -= 1,
                quick_xml::events::Event::Eof => break,
                _ => {}
            }
            buf.clear();
        }
        assert_eq!(depth, 0);
    }
}
