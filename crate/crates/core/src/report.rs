//! Plot data as CSV plus minimal static SVG renderings.

use crate::corpus::Corpus;
use crate::emotion::{Emotion, PairEmotions};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub title: String,
    /// Bin edges, one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn fixed(title: impl Into<String>, values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self {
            title: title.into(),
            edges,
            counts,
        }
    }

    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 240.0, 30.0);
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bw = (w - 2.0 * pad) / self.counts.len().max(1) as f64;
        let mut bars = String::new();
        for (k, &c) in self.counts.iter().enumerate() {
            let bh = (h - 2.0 * pad) * c as f64 / max;
            bars.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4a7ab5\"><title>[{:.3}, {:.3}): {c}</title></rect>\n",
                pad + bw * k as f64 + 1.0,
                h - pad - bh,
                (bw - 2.0).max(0.5),
                bh,
                self.edges[k],
                self.edges[k + 1]
            ));
        }
        svg_frame(w, h, &self.title, &bars, &self.axis_labels(w, h, pad))
    }

    fn axis_labels(&self, w: f64, h: f64, pad: f64) -> String {
        let lo = self.edges.first().copied().unwrap_or(0.0);
        let hi = self.edges.last().copied().unwrap_or(1.0);
        format!(
            "<text x=\"{pad}\" y=\"{:.1}\" font-size=\"10\">{lo:.2}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{hi:.2}</text>\n",
            h - pad + 14.0,
            w - pad,
            h - pad + 14.0
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_frame(w: f64, h: f64, title: &str, body: &str, extra: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{:.1}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n{body}{extra}</svg>\n",
        w / 2.0,
        escape(title)
    )
}

/// `label,bin_low,bin_high,count` rows for a set of histograms.
pub fn histograms_csv(hists: &[Histogram]) -> String {
    let mut s = String::from("label,bin_low,bin_high,count\n");
    for h in hists {
        for (k, c) in h.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", h.title, h.edges[k], h.edges[k + 1], c));
        }
    }
    s
}

/// One histogram per emotion and side (question / response), ten bins on
/// [0, 1].
pub fn emotion_histograms(scores: &[PairEmotions]) -> Vec<Histogram> {
    let mut out = Vec::new();
    for side in ["Q", "R"] {
        for e in Emotion::ALL {
            let v: Vec<f64> = scores
                .iter()
                .map(|p| if side == "Q" { p.question.get(e) } else { p.response.get(e) })
                .collect();
            out.push(Histogram::fixed(format!("{side}_{}", e.name().to_uppercase()), &v, 0.0, 1.0, 10));
        }
    }
    out
}

/// Response character lengths split by the helpful flag, in 100-character
/// bins up to the longest response.
pub fn length_histograms(corpus: &Corpus) -> Vec<Histogram> {
    let lens = |flag: bool| -> Vec<f64> {
        corpus
            .pairs
            .iter()
            .filter(|p| p.helpful == Some(flag))
            .map(|p| p.response_text.chars().count() as f64)
            .collect()
    };
    let max = corpus
        .pairs
        .iter()
        .map(|p| p.response_text.chars().count())
        .max()
        .unwrap_or(0);
    let bins = (max / 100 + 1).max(1);
    let hi = (bins * 100) as f64;
    vec![
        Histogram::fixed("helpful", &lens(true), 0.0, hi, bins),
        Histogram::fixed("non_helpful", &lens(false), 0.0, hi, bins),
    ]
}

/// Beeswarm-style scatter from `feature,value,phi,instance` CSV rows: one
/// lane per feature, x = φ, colour = value rank within the feature.
pub fn beeswarm_svg(csv: &str) -> Result<String> {
    let mut lanes: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            return Err(crate::Error::Parse {
                line: i + 1,
                message: "expected feature,value,phi".into(),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| crate::Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        };
        let (v, phi) = (parse(cells[1])?, parse(cells[2])?);
        match lanes.iter_mut().find(|(n, _)| n == cells[0]) {
            Some((_, pts)) => pts.push((v, phi)),
            None => lanes.push((cells[0].to_string(), vec![(v, phi)])),
        }
    }
    let lane_h = 22.0;
    let (w, left, pad) = (560.0, 130.0, 30.0);
    let h = pad * 2.0 + lane_h * lanes.len().max(1) as f64;
    let span = lanes
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.1.abs()))
        .fold(0.0, f64::max)
        .max(1e-12);
    let x_of = |phi: f64| left + (w - left - pad) * (phi / span + 1.0) / 2.0;
    let mut body = format!(
        "<line x1=\"{0:.1}\" x2=\"{0:.1}\" y1=\"{pad}\" y2=\"{1:.1}\" stroke=\"#999\"/>\n",
        x_of(0.0),
        h - pad
    );
    for (k, (name, pts)) in lanes.iter().enumerate() {
        let y = pad + lane_h * (k as f64 + 0.5);
        body.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            y + 3.0,
            escape(name)
        ));
        let mut sorted: Vec<f64> = pts.iter().map(|p| p.0).collect();
        sorted.sort_by(f64::total_cmp);
        for (j, &(v, phi)) in pts.iter().enumerate() {
            let rank = sorted.partition_point(|&s| s < v) as f64 / (sorted.len().max(2) - 1) as f64;
            let (r, b) = ((255.0 * rank) as u8, (255.0 * (1.0 - rank)) as u8);
            let jitter = ((j * 7919) % 11) as f64 - 5.0;
            body.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"rgb({r},40,{b})\"/>\n",
                x_of(phi),
                y + jitter
            ));
        }
    }
    Ok(svg_frame(w, h, "Shapley values (x) by feature; colour = feature value", &body, ""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_and_edges() {
        let h = Histogram::fixed("x", &[0.0, 0.05, 0.5, 1.0, 0.999], 0.0, 1.0, 10);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.edges.len(), 11);
        assert!(h.to_svg().starts_with("<svg"));
    }

    #[test]
    fn beeswarm_parses_csv() {
        let csv = "feature,value,phi,instance\nA,1,0.2,0\nA,2,-0.1,1\nB,0,0,0\n";
        let svg = beeswarm_svg(csv).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(beeswarm_svg("h\nA,x,1\n").is_err());
    }
}
