//! Minimal hand-emitted SVG line plots: enough for log-log tail curves,
//! covering-sum series, and curve traces, with no plotting dependency.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const PALETTE: [&str; 5] = ["#1f6fb4", "#c23b22", "#2a9d5c", "#8452b0", "#b58500"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

impl Plot {
    pub fn render(&self) -> String {
        let tx = |v: f64| if self.log_x { v.ln() } else { v };
        let ty = |v: f64| if self.log_y { v.ln() } else { v };
        let mut x0 = f64::MAX;
        let mut x1 = f64::MIN;
        let mut y0 = f64::MAX;
        let mut y1 = f64::MIN;
        for s in &self.series {
            for (x, y) in &s.points {
                if self.log_x && *x <= 0.0 || self.log_y && *y <= 0.0 {
                    continue;
                }
                x0 = x0.min(tx(*x));
                x1 = x1.max(tx(*x));
                y0 = y0.min(ty(*y));
                y1 = y1.max(ty(*y));
            }
        }
        if x0 >= x1 {
            x1 = x0 + 1.0;
        }
        if y0 >= y1 {
            y1 = y0 + 1.0;
        }
        let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"sans-serif\" font-size=\"13\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{h}\" fill=\"none\" \
             stroke=\"#444\"/>\n",
            m = MARGIN,
            w = WIDTH - 2.0 * MARGIN,
            h = HEIGHT - 2.0 * MARGIN
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
            WIDTH / 2.0,
            xml_escape(&self.title)
        ));
        let x_axis = if self.log_x {
            format!("{} (log)", self.x_label)
        } else {
            self.x_label.clone()
        };
        let y_axis = if self.log_y {
            format!("{} (log)", self.y_label)
        } else {
            self.y_label.clone()
        };
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            WIDTH / 2.0,
            HEIGHT - 18.0,
            xml_escape(&x_axis)
        ));
        out.push_str(&format!(
            "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            xml_escape(&y_axis)
        ));
        // Corner range labels.
        let inv_x = |u: f64| if self.log_x { u.exp() } else { u };
        let inv_y = |u: f64| if self.log_y { u.exp() } else { u };
        out.push_str(&format!(
            "<text x=\"{m}\" y=\"{}\" font-size=\"11\">{}</text>\n",
            HEIGHT - MARGIN + 16.0,
            fmt(inv_x(x0)),
            m = MARGIN
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            WIDTH - MARGIN,
            HEIGHT - MARGIN + 16.0,
            fmt(inv_x(x1))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            MARGIN - 6.0,
            HEIGHT - MARGIN,
            fmt(inv_y(y0))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            MARGIN - 6.0,
            MARGIN + 4.0,
            fmt(inv_y(y1))
        ));

        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| !(self.log_x && *x <= 0.0 || self.log_y && *y <= 0.0))
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"{dash} \
                 points=\"{}\"/>\n",
                pts.join(" ")
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{}</text>\n",
                WIDTH - MARGIN + 6.0,
                MARGIN + 16.0 * idx as f64,
                xml_escape(&s.name)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
