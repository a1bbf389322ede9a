//! Plain-text box lists.
//!
//! Detections: `class_id score cx cy w h theta_rad`, one per line.
//! Ground truth: the same without the score. Blank lines and lines starting
//! with `#` are skipped.

use std::fmt::Write;

use svlb_core::eval::RotatedBox;

fn parse(text: &str, with_score: bool) -> Result<Vec<RotatedBox>, String> {
    let want = if with_score { 7 } else { 6 };
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != want {
            return Err(format!(
                "line {}: expected {want} fields, found {}",
                ln + 1,
                fields.len()
            ));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| format!("line {}: bad class id `{}`", ln + 1, fields[0]))?;
        let nums = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|_| format!("line {}: bad number `{f}`", ln + 1))
            })
            .collect::<Result<Vec<f32>, String>>()?;
        let (score, g) = if with_score {
            (nums[0], &nums[1..])
        } else {
            (1.0, &nums[..])
        };
        let b = RotatedBox::new(g[0], g[1], g[2], g[3], g[4], class_id).with_score(score);
        b.validate().map_err(|e| format!("line {}: {e}", ln + 1))?;
        out.push(b);
    }
    Ok(out)
}

pub fn parse_detections(text: &str) -> Result<Vec<RotatedBox>, String> {
    parse(text, true)
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<RotatedBox>, String> {
    parse(text, false)
}

pub fn format_detections(boxes: &[RotatedBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            b.class_id, b.score, b.cx, b.cy, b.w, b.h, b.theta
        );
    }
    s
}

pub fn format_ground_truth(boxes: &[RotatedBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{} {} {} {} {} {}", b.class_id, b.cx, b.cy, b.w, b.h, b.theta);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let boxes = vec![
            RotatedBox::new(10.5, 3.25, 4.0, 2.0, 0.1, 2).with_score(0.875),
            RotatedBox::new(1.0 / 3.0, 7.0, 1.5, 1.5, -1.2, 0).with_score(0.1),
        ];
        assert_eq!(parse_detections(&format_detections(&boxes)).unwrap(), boxes);
        let gt = parse_ground_truth(&format_ground_truth(&boxes)).unwrap();
        assert_eq!(gt[0].cx, 10.5);
        assert_eq!(gt[1].score, 1.0);
    }

    #[test]
    fn reports_the_line() {
        let err = parse_ground_truth("# header\n0 1 2 3 4 0\n1 2 3\n").unwrap_err();
        assert!(err.starts_with("line 3"), "{err}");
    }
}
