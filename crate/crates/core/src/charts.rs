//! Minimal SVG renderers for the report figures.

use std::fmt::Write;

use crate::eval::{ConfusionMatrix, EvalReport};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";
const PALETTE: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Cumulative explained variance per component, with a dashed threshold line.
pub fn cumulative_variance_svg(cumulative: &[f64], threshold: f64) -> String {
    let (w, h, left, bottom, top, right) = (560.0, 360.0, 60.0, 50.0, 30.0, 20.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let n = cumulative.len().max(1);
    let x = |i: usize| left + if n == 1 { plot_w / 2.0 } else { plot_w * i as f64 / (n - 1) as f64 };
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" {FONT}>");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">Cumulative explained variance</text>", w / 2.0);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>", y(v), w - right);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>", left - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#c44e52\" stroke-dasharray=\"6,4\"/>",
        y(threshold),
        w - right
    );
    let points: Vec<String> = cumulative.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>", PALETTE[0], points.join(" "));
    for (i, &v) in cumulative.iter().enumerate() {
        let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>", x(i), y(v), PALETTE[0]);
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", x(i), h - bottom + 18.0, i + 1);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Number of components</text>", left + plot_w / 2.0, h - 10.0);
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per model, one bar per metric. Undefined metrics are drawn as empty slots.
pub fn metrics_bar_svg(reports: &[EvalReport], title: &str) -> String {
    let metrics = ["accuracy", "precision", "recall"];
    let bar = 18.0;
    let group = bar * 3.0 + 24.0;
    let (left, top, bottom) = (50.0, 40.0, 60.0);
    let plot_h = 260.0;
    let w = left + group * reports.len().max(1) as f64 + 140.0;
    let h = top + plot_h + bottom;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" {FONT}>");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>", w / 2.0, escape(title));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>", y(v), w - 140.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>", left - 6.0, y(v) + 4.0);
    }
    for (g, r) in reports.iter().enumerate() {
        let gx = left + 12.0 + g as f64 * group;
        let values = [Some(r.metrics.accuracy), r.metrics.precision.value(), r.metrics.recall.value()];
        for (k, v) in values.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{:.1}\" fill=\"{}\"><title>{} {}: {v:.4}</title></rect>",
                    gx + k as f64 * bar,
                    y(*v),
                    top + plot_h - y(*v),
                    PALETTE[k],
                    escape(&r.model),
                    metrics[k]
                );
            }
        }
        let label = if r.split.is_empty() { r.model.clone() } else { format!("{} ({})", r.model, r.split) };
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" transform=\"rotate(-30 {:.1} {:.1})\">{}</text>",
            gx + bar * 1.5,
            top + plot_h + 16.0,
            gx + bar * 1.5,
            top + plot_h + 16.0,
            escape(&label)
        );
    }
    for (k, name) in metrics.iter().enumerate() {
        let ly = top + 10.0 + k as f64 * 20.0;
        let lx = w - 125.0;
        let _ = writeln!(s, "<rect x=\"{lx}\" y=\"{ly}\" width=\"12\" height=\"12\" fill=\"{}\"/>", PALETTE[k]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{name}</text>", lx + 18.0, ly + 11.0);
    }
    s.push_str("</svg>\n");
    s
}

/// 2×2 annotated heatmap; rows are the true class, columns the prediction.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cells = [[cm.tn, cm.fp], [cm.fn_, cm.tp]];
    let max = cells.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let (cell, left, top) = (110.0, 110.0, 50.0);
    let w = left + 2.0 * cell + 30.0;
    let h = top + 2.0 * cell + 50.0;
    let names = ["non-hit", "hit"];

    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" {FONT}>");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>", w / 2.0, escape(title));
    for (r, row) in cells.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let shade = 1.0 - 0.8 * count as f64 / max;
            let level = (255.0 * shade) as u8;
            let (x, y) = (left + c as f64 * cell, top + r as f64 * cell);
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({level},{level},255)\" stroke=\"#333\"/>"
            );
            let colour = if shade < 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{colour}\" font-size=\"18\">{count}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 6.0
            );
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">true {}</text>", left - 8.0, top + r as f64 * cell + cell / 2.0 + 4.0, names[r]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">pred {}</text>", left + r as f64 * cell + cell / 2.0, top + 2.0 * cell + 20.0, names[r]);
    }
    s.push_str("</svg>\n");
    s
}
