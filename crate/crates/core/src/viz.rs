//! Minimal deterministic SVG bar charts for reports. Hand-built markup so
//! output bytes depend only on the input values.

/// Horizontal bar chart. `values` are fractions in [0, 1] rendered as
/// percentages when `as_percent` is set, otherwise raw with two decimals.
pub(crate) fn svg_bar_chart(title: &str, labels: &[String], values: &[f64], as_percent: bool) -> String {
    assert_eq!(labels.len(), values.len());
    let bar_height = 22;
    let gap = 8;
    let label_width = 230;
    let bar_area = 420;
    let top = 40;
    let width = label_width + bar_area + 110;
    let height = top + labels.len() * (bar_height + gap) + 20;
    let max_value = values.iter().cloned().fold(0.0f64, f64::max).max(1e-9);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<style>text{font-family:monospace;font-size:13px;}</style>\n");
    svg.push_str(&format!(
        "<text x=\"12\" y=\"22\" font-weight=\"bold\">{}</text>\n",
        escape(title)
    ));
    for (i, (label, &value)) in labels.iter().zip(values).enumerate() {
        let y = top + i * (bar_height + gap);
        let bar = ((value / max_value) * bar_area as f64).round() as i64;
        let shown = if as_percent {
            format!("{:.1}%", value * 100.0)
        } else {
            format!("{value:.2}")
        };
        svg.push_str(&format!(
            "<text x=\"12\" y=\"{}\">{}</text>\n",
            y + 15,
            escape(label)
        ));
        svg.push_str(&format!(
            "<rect x=\"{label_width}\" y=\"{y}\" width=\"{}\" height=\"{bar_height}\" fill=\"#4878a8\"/>\n",
            bar.max(1)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            label_width + bar.max(1) as usize + 8,
            y + 15,
            shown
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
