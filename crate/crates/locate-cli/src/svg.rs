//! Dependency-free SVG rendering for the evaluation plots.
//!
//! Two charts: per-class AP against the tIoU threshold sweep, and the
//! class-agnostic confusion matrix as a heat grid. Both are plain strings —
//! deterministic, diffable, and viewable in anything that renders SVG.

/// Distinct stroke color for class `k` of `n`: evenly spaced hues, darkened
/// enough to read on white.
fn class_color(k: usize, n: usize) -> String {
    let hue = 360.0 * k as f64 / n.max(1) as f64;
    format!("hsl({hue:.0},70%,40%)")
}

fn fmt(v: f64) -> String {
    // Fixed decimals keep the output stable and readable; 2 is plenty for
    // plot coordinates at this scale.
    format!("{v:.2}")
}

/// Per-class AP-vs-tIoU line chart. One polyline per class, plus the mean.
///
/// `ap[c][i]` is class `c` at `thresholds[i]`, exactly the layout the
/// evaluation report uses.
pub fn ap_vs_tiou(thresholds: &[f64], ap: &[Vec<f64>], class_names: &[String]) -> String {
    assert_eq!(ap.len(), class_names.len(), "one name per class");
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 170.0, 30.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let (x_lo, x_hi) = thresholds
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let x_span = if (x_hi - x_lo).abs() < 1e-12 { 1.0 } else { x_hi - x_lo };
    let x = |t: f64| ml + (t - x_lo) / x_span * pw;
    let y = |v: f64| mt + (1.0 - v.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"14\">Average precision by tIoU threshold</text>\n",
        ml
    ));

    // grid + y ticks
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let yy = y(v);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(ml),
            fmt(yy),
            fmt(ml + pw),
            fmt(yy)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>\n",
            fmt(ml - 8.0),
            fmt(yy + 4.0)
        ));
    }
    // x ticks at each threshold
    for &t in thresholds {
        let xx = x(t);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#bbb\"/>\n",
            fmt(xx),
            fmt(mt + ph),
            fmt(xx),
            fmt(mt + ph + 5.0)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n",
            fmt(xx),
            fmt(mt + ph + 20.0)
        ));
    }
    // axes
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(ml),
        fmt(mt),
        fmt(ml),
        fmt(mt + ph)
    ));
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(ml),
        fmt(mt + ph),
        fmt(ml + pw),
        fmt(mt + ph)
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">tIoU threshold</text>\n",
        fmt(ml + pw / 2.0),
        fmt(h - 12.0)
    ));

    // one polyline per class + legend
    for (c, row) in ap.iter().enumerate() {
        let color = class_color(c, ap.len());
        let pts: Vec<String> = thresholds
            .iter()
            .zip(row)
            .map(|(&t, &v)| format!("{},{}", fmt(x(t)), fmt(y(v))))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = mt + 14.0 + 18.0 * c as f64;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(ml + pw + 12.0),
            fmt(ly - 4.0),
            fmt(ml + pw + 34.0),
            fmt(ly - 4.0)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(ml + pw + 40.0),
            fmt(ly),
            escape(&class_names[c])
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Confusion heat grid. `counts[i][j]` = ground-truth row `i`, predicted
/// column `j`; the extra trailing row/column hold unmatched detections and
/// missed ground truths. Cells are shaded by their share of the predicted
/// column, so each column reads as "where did this prediction's credit go".
pub fn confusion(counts: &[Vec<u64>], class_names: &[String]) -> String {
    let n = counts.len();
    assert!(n >= 1 && counts.iter().all(|r| r.len() == n));
    assert_eq!(class_names.len() + 1, n, "one name per class plus the sentinel");

    let cell = 52.0;
    let (ml, mt) = (110.0, 90.0);
    let (w, h) = (ml + cell * n as f64 + 30.0, mt + cell * n as f64 + 30.0);
    let label = |i: usize| -> String {
        if i + 1 == n {
            "(none)".into()
        } else {
            escape(&class_names[i])
        }
    };

    let mut col_tot = vec![0u64; n];
    for row in counts {
        for (j, &v) in row.iter().enumerate() {
            col_tot[j] += v;
        }
    }

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str("<text x=\"12\" y=\"20\" font-size=\"14\">Confusion (rows: ground truth, columns: predicted)</text>\n");

    for (i, row) in counts.iter().enumerate() {
        // row label
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(ml - 8.0),
            fmt(mt + cell * (i as f64 + 0.5) + 4.0),
            label(i)
        ));
        for (j, &v) in row.iter().enumerate() {
            let share = if col_tot[j] == 0 {
                0.0
            } else {
                v as f64 / col_tot[j] as f64
            };
            // white → deep blue
            let light = 97.0 - 55.0 * share;
            let (x0, y0) = (ml + cell * j as f64, mt + cell * i as f64);
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"hsl(215,65%,{light:.0}%)\" stroke=\"#999\"/>\n",
                fmt(x0),
                fmt(y0)
            ));
            let text_fill = if share > 0.55 { "white" } else { "black" };
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text_fill}\">{v}</text>\n",
                fmt(x0 + cell / 2.0),
                fmt(y0 + cell / 2.0 + 4.0)
            ));
        }
    }
    // column labels, rotated to fit
    for j in 0..n {
        let x0 = ml + cell * (j as f64 + 0.5);
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"start\" \
             transform=\"rotate(-45 {} {})\">{}</text>\n",
            fmt(x0),
            fmt(mt - 10.0),
            fmt(x0),
            fmt(mt - 10.0),
            label(j)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
