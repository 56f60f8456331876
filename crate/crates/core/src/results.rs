//! Plain-text per-frame tracking records:
//! `frame cx cy w h score updated` per line, frame pixels, diff-able.

use crate::codec::BBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub bbox: BBox,
    pub score: f32,
    pub updated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResultsError {
    pub line_number: usize,
    pub line: String,
    pub reason: String,
}

impl std::fmt::Display for ResultsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "results line {}: {} ({:?})",
            self.line_number, self.reason, self.line
        )
    }
}

impl std::error::Error for ResultsError {}

pub fn render_record(r: &FrameRecord) -> String {
    format!(
        "{} {} {} {} {} {} {}",
        r.frame,
        r.bbox.cx,
        r.bbox.cy,
        r.bbox.w,
        r.bbox.h,
        r.score,
        if r.updated { 1 } else { 0 }
    )
}

pub fn render_file(records: &[FrameRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&render_record(r));
        out.push('\n');
    }
    out
}

fn parse_record(line_number: usize, line: &str) -> Result<FrameRecord, ResultsError> {
    let err = |reason: &str| ResultsError {
        line_number,
        line: line.to_string(),
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(err(&format!("expected 7 fields, got {}", fields.len())));
    }
    let frame: u64 = fields[0].parse().map_err(|_| err("bad frame index"))?;
    let mut nums = [0.0f32; 5];
    for (i, v) in nums.iter_mut().enumerate() {
        *v = fields[i + 1].parse().map_err(|_| err("bad numeric field"))?;
        if !v.is_finite() {
            return Err(err("non-finite numeric field"));
        }
    }
    let updated = match fields[6] {
        "0" => false,
        "1" => true,
        _ => return Err(err("updated flag must be 0 or 1")),
    };
    Ok(FrameRecord {
        frame,
        bbox: BBox::new(nums[0], nums[1], nums[2], nums[3]),
        score: nums[4],
        updated,
    })
}

/// Strict reference parser: any malformed line is an error.
pub fn parse_file(text: &str) -> Result<Vec<FrameRecord>, ResultsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(i + 1, line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let records = vec![
            FrameRecord {
                frame: 0,
                bbox: BBox::new(64.0, 48.5, 18.25, 20.0),
                score: 1.0,
                updated: false,
            },
            FrameRecord {
                frame: 1,
                bbox: BBox::new(65.125, 47.75, 18.25, 20.0),
                score: 0.0153,
                updated: true,
            },
        ];
        let text = render_file(&records);
        let back = parse_file(&text).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_file("0 1 2 3 4 5").is_err()); // six fields
        assert!(parse_file("0 1 2 3 4 5 2").is_err()); // bad flag
        assert!(parse_file("x 1 2 3 4 5 0").is_err()); // bad frame
        assert!(parse_file("0 1 2 three 4 5 0").is_err()); // bad float
        assert!(parse_file("0 1 2 inf 4 5 0").is_err()); // non-finite
    }
}
