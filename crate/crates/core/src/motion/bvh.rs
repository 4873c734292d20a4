//! BVH hierarchy and motion parsing and writing.

use std::fmt::Write as _;

use ndarray::Array2;

use super::rotation::{Axis, EulerOrder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position(Axis),
    Rotation(Axis),
}

impl Channel {
    fn parse(label: &str) -> Option<Channel> {
        let (axis, kind) = label.split_at(1.min(label.len()));
        let axis = match axis {
            "X" | "x" => Axis::X,
            "Y" | "y" => Axis::Y,
            "Z" | "z" => Axis::Z,
            _ => return None,
        };
        match kind.to_ascii_lowercase().as_str() {
            "position" => Some(Channel::Position(axis)),
            "rotation" => Some(Channel::Rotation(axis)),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Channel::Position(a) => format!("{}position", a.letter()),
            Channel::Rotation(a) => format!("{}rotation", a.letter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, centimeters.
    pub offset: [f64; 3],
    pub channels: Vec<Channel>,
}

/// BVH `End Site` leaf. Parsed and written back, never part of features.
#[derive(Debug, Clone, PartialEq)]
pub struct EndSite {
    pub parent: usize,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    end_sites: Vec<EndSite>,
    channel_starts: Vec<usize>,
    rotation_orders: Vec<EulerOrder>,
    /// Column of each root position axis, relative to the root's first channel.
    root_position_slots: [usize; 3],
}

impl Skeleton {
    /// Validates the hierarchy invariants: a unique root at index 0,
    /// topological order, 6 root channels and 3 rotation channels elsewhere.
    pub fn new(joints: Vec<Joint>, end_sites: Vec<EndSite>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Invalid("skeleton has no joints".into()));
        }
        let mut channel_starts = Vec::with_capacity(joints.len());
        let mut rotation_orders = Vec::with_capacity(joints.len());
        let mut root_position_slots = [usize::MAX; 3];
        let mut start = 0;
        for (idx, j) in joints.iter().enumerate() {
            match (idx, j.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::Invalid("joint 0 must be the root".into()));
                }
                (_, None) => {
                    return Err(Error::Invalid(format!(
                        "joint '{}' has no parent; only one root is supported",
                        j.name
                    )));
                }
                (_, Some(p)) if p >= idx => {
                    return Err(Error::Invalid(format!(
                        "joint '{}' is not topologically sorted",
                        j.name
                    )));
                }
                _ => {}
            }
            let expected = if idx == 0 { 6 } else { 3 };
            if j.channels.len() != expected {
                return Err(Error::Invalid(format!(
                    "joint '{}' has {} channels, expected {}",
                    j.name,
                    j.channels.len(),
                    expected
                )));
            }
            let mut rot = Vec::with_capacity(3);
            for (k, ch) in j.channels.iter().enumerate() {
                match *ch {
                    Channel::Rotation(a) => rot.push(a),
                    Channel::Position(a) if idx == 0 => {
                        if root_position_slots[a.index()] != usize::MAX {
                            return Err(Error::Invalid("root repeats a position axis".into()));
                        }
                        root_position_slots[a.index()] = k;
                    }
                    Channel::Position(_) => {
                        return Err(Error::Invalid(format!(
                            "non-root joint '{}' carries position channels",
                            j.name
                        )));
                    }
                }
            }
            let axes: [Axis; 3] = rot
                .try_into()
                .map_err(|_| Error::Invalid(format!("joint '{}' needs 3 rotation channels", j.name)))?;
            rotation_orders.push(EulerOrder::new(axes)?);
            channel_starts.push(start);
            start += j.channels.len();
        }
        for site in &end_sites {
            if site.parent >= joints.len() {
                return Err(Error::Invalid("end site parent out of range".into()));
            }
        }
        Ok(Skeleton {
            joints,
            end_sites,
            channel_starts,
            rotation_orders,
            root_position_slots,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn end_sites(&self) -> &[EndSite] {
        &self.end_sites
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    pub fn channel_start(&self, joint: usize) -> usize {
        self.channel_starts[joint]
    }

    pub fn rotation_order(&self, joint: usize) -> EulerOrder {
        self.rotation_orders[joint]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Column indices of the root X/Y/Z position channels.
    pub fn root_position_columns(&self) -> [usize; 3] {
        self.root_position_slots.map(|k| self.channel_starts[0] + k)
    }

    /// Column indices of this joint's rotation channels, in channel order.
    pub fn rotation_columns(&self, joint: usize) -> [usize; 3] {
        let start = self.channel_starts[joint];
        let mut out = [0; 3];
        let mut n = 0;
        for (k, ch) in self.joints[joint].channels.iter().enumerate() {
            if let Channel::Rotation(_) = ch {
                out[n] = start + k;
                n += 1;
            }
        }
        out
    }

    pub fn same_topology(&self, other: &Skeleton) -> bool {
        self.joints.len() == other.joints.len()
            && self
                .joints
                .iter()
                .zip(&other.joints)
                .all(|(a, b)| a.name == b.name && a.parent == b.parent && a.channels == b.channels)
            && self.end_sites.len() == other.end_sites.len()
    }
}

/// Per-frame channel values: degrees for rotations, centimeters for positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: u32,
    pub frames: Array2<f64>,
}

impl MotionSequence {
    pub fn new(fps: u32, frames: Array2<f64>) -> Result<Self> {
        if fps == 0 {
            return Err(Error::Invalid("fps must be positive".into()));
        }
        if frames.nrows() == 0 {
            return Err(Error::Invalid("motion has no frames".into()));
        }
        Ok(MotionSequence { fps, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn check_against(&self, skeleton: &Skeleton) -> Result<()> {
        if self.frames.ncols() != skeleton.channel_count() {
            return Err(Error::Shape(format!(
                "motion has {} channels, skeleton expects {}",
                self.frames.ncols(),
                skeleton.channel_count()
            )));
        }
        Ok(())
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens {
            items,
            pos: 0,
            last_line: 1,
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        match self.items.get(self.pos) {
            Some(&(line, tok)) => {
                self.pos += 1;
                self.last_line = line;
                Ok((line, tok))
            }
            None => Err(Error::parse(self.last_line, "unexpected end of file")),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|&(_, t)| t)
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        let (line, tok) = self.next()?;
        if tok != word {
            return Err(Error::parse(line, format!("expected '{word}', found '{tok}'")));
        }
        Ok(line)
    }

    fn number(&mut self) -> Result<f64> {
        let (line, tok) = self.next()?;
        parse_number(tok).ok_or_else(|| Error::parse(line, format!("expected a number, found '{tok}'")))
    }

    fn offset(&mut self) -> Result<[f64; 3]> {
        self.expect("OFFSET")?;
        Ok([self.number()?, self.number()?, self.number()?])
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_joint(
    toks: &mut Tokens<'_>,
    parent: Option<usize>,
    joints: &mut Vec<Joint>,
    end_sites: &mut Vec<EndSite>,
) -> Result<()> {
    let (_, name) = toks.next()?;
    toks.expect("{")?;
    let offset = toks.offset()?;
    let line = toks.expect("CHANNELS")?;
    let n = toks.number()?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(Error::parse(line, "channel count must be a non-negative integer"));
    }
    let mut channels = Vec::with_capacity(n as usize);
    for _ in 0..n as usize {
        let (line, label) = toks.next()?;
        channels.push(Channel::parse(label).ok_or_else(|| Error::parse(line, format!("unknown channel '{label}'")))?);
    }
    let me = joints.len();
    joints.push(Joint {
        name: name.to_string(),
        parent,
        offset,
        channels,
    });
    loop {
        let (line, tok) = toks.next()?;
        match tok {
            "JOINT" => parse_joint(toks, Some(me), joints, end_sites)?,
            "End" => {
                toks.expect("Site")?;
                toks.expect("{")?;
                let offset = toks.offset()?;
                toks.expect("}")?;
                end_sites.push(EndSite { parent: me, offset });
            }
            "}" => return Ok(()),
            other => {
                return Err(Error::parse(
                    line,
                    format!("unexpected token '{other}' in joint '{name}'"),
                ));
            }
        }
    }
}

pub fn parse_bvh(text: &str) -> Result<(Skeleton, MotionSequence)> {
    let mut toks = Tokens::new(text);
    toks.expect("HIERARCHY")?;
    let line = toks.expect("ROOT")?;
    let mut joints = Vec::new();
    let mut end_sites = Vec::new();
    parse_joint(&mut toks, None, &mut joints, &mut end_sites)?;
    let skeleton = Skeleton::new(joints, end_sites).map_err(|e| Error::parse(line, e.to_string()))?;

    toks.expect("MOTION")?;
    toks.expect("Frames:")?;
    let (line, tok) = toks.next()?;
    let n_frames: usize = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("bad frame count '{tok}'")))?;
    toks.expect("Frame")?;
    let line = toks.expect("Time:")?;
    let frame_time = toks.number()?;
    if !(frame_time > 0.0) {
        return Err(Error::parse(line, "frame time must be positive"));
    }
    let fps = (1.0 / frame_time).round() as u32;

    // Frame rows are line-oriented; count values per physical line.
    let width = skeleton.channel_count();
    let data_start_line = toks.last_line;
    let mut values = Vec::with_capacity(n_frames * width);
    let mut rows = 0;
    for (i, raw) in text.lines().enumerate().skip(data_start_line) {
        let line_no = i + 1;
        let row: Vec<&str> = raw.split_whitespace().collect();
        if row.is_empty() {
            continue;
        }
        if row.len() != width {
            return Err(Error::parse(
                line_no,
                format!("frame row has {} values, skeleton has {} channels", row.len(), width),
            ));
        }
        for tok in row {
            values.push(
                parse_number(tok).ok_or_else(|| Error::parse(line_no, format!("non-numeric frame value '{tok}'")))?,
            );
        }
        rows += 1;
    }
    if toks.peek().is_some() && rows == 0 && n_frames > 0 {
        return Err(Error::parse(data_start_line, "missing frame data"));
    }
    if rows != n_frames {
        return Err(Error::parse(
            data_start_line,
            format!("header declares {n_frames} frames, found {rows}"),
        ));
    }
    let frames = Array2::from_shape_vec((rows, width), values).expect("row-major frame buffer");
    let motion = MotionSequence::new(fps, frames).map_err(|e| Error::parse(data_start_line, e.to_string()))?;
    Ok((skeleton, motion))
}

/// Fixed-point text with at least six significant digits.
fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0.000000".into();
    }
    let lead_zeros = if v.abs() < 1.0 {
        (-v.abs().log10()).floor() as usize
    } else {
        0
    };
    format!("{:.*}", (6 + lead_zeros).min(24), v)
}

pub fn write_bvh(skeleton: &Skeleton, motion: &MotionSequence) -> Result<String> {
    motion.check_against(skeleton)?;
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_joint(skeleton, 0, 0, &mut out);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", motion.num_frames());
    let _ = writeln!(out, "Frame Time: {:.7}", 1.0 / motion.fps as f64);
    for row in motion.frames.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn write_joint(skeleton: &Skeleton, idx: usize, depth: usize, out: &mut String) {
    let indent = "\t".repeat(depth);
    let j = &skeleton.joints[idx];
    let kw = if j.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{indent}{kw} {}", j.name);
    let _ = writeln!(out, "{indent}{{");
    let off: Vec<String> = j.offset.iter().map(|&v| fmt_num(v)).collect();
    let _ = writeln!(out, "{indent}\tOFFSET {}", off.join(" "));
    let labels: Vec<String> = j.channels.iter().map(Channel::label).collect();
    let _ = writeln!(out, "{indent}\tCHANNELS {} {}", labels.len(), labels.join(" "));
    for child in (idx + 1..skeleton.joints.len()).filter(|&c| skeleton.joints[c].parent == Some(idx)) {
        write_joint(skeleton, child, depth + 1, out);
    }
    for site in skeleton.end_sites.iter().filter(|s| s.parent == idx) {
        let off: Vec<String> = site.offset.iter().map(|&v| fmt_num(v)).collect();
        let _ = writeln!(out, "{indent}\tEnd Site");
        let _ = writeln!(out, "{indent}\t{{");
        let _ = writeln!(out, "{indent}\t\tOFFSET {}", off.join(" "));
        let _ = writeln!(out, "{indent}\t}}");
    }
    let _ = writeln!(out, "{indent}}}");
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 10 0
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 0 0 0 0 0
0 0 0 0 0 0
";

    #[test]
    fn minimal_document() {
        let (sk, mo) = parse_bvh(MINIMAL).unwrap();
        assert_eq!(sk.num_joints(), 1);
        assert_eq!(sk.end_sites().len(), 1);
        assert_eq!(mo.frames.dim(), (2, 6));
        assert!(mo.frames.iter().all(|&v| v == 0.0));
        assert_eq!(mo.fps, 30);
        assert_eq!(sk.rotation_order(0), EulerOrder::ZXY);
        assert_eq!(sk.root_position_columns(), [0, 1, 2]);
    }

    #[test]
    fn write_zero_motion_rows() {
        let (sk, mo) = parse_bvh(MINIMAL).unwrap();
        let text = write_bvh(&sk, &mo).unwrap();
        assert!(text.contains("Frame Time: 0.0333333\n"));
        let rows: Vec<&str> = text.lines().rev().take(2).collect();
        for r in rows {
            assert!(r.split_whitespace().all(|t| t.parse::<f64>().unwrap() == 0.0));
        }
        let (sk2, mo2) = parse_bvh(&text).unwrap();
        assert!(sk.same_topology(&sk2));
        assert_eq!(mo, mo2);
    }

    #[test]
    fn row_width_mismatch_names_line() {
        let bad = MINIMAL.replacen("0 0 0 0 0 0\n0 0", "0 0 0 0 0 0\n0 0 0 0 0\n0 0", 1);
        let bad = bad.replace("Frames: 2", "Frames: 3");
        match parse_bvh(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_frame_value() {
        let bad = MINIMAL.replacen("0 0 0 0 0 0\n", "0 0 abc 0 0 0\n", 1);
        match parse_bvh(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 14);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        let bad = MINIMAL.replace("OFFSET 0 0 0", "OFSET 0 0 0");
        assert!(matches!(parse_bvh(&bad), Err(Error::Parse { line: 4, .. })));
        assert!(parse_bvh("HIERARCHY\nROOT").is_err());
        let bad = MINIMAL.replace("Xposition", "Wposition");
        assert!(parse_bvh(&bad).is_err());
    }

    #[test]
    fn frame_count_mismatch() {
        let bad = MINIMAL.replace("Frames: 2", "Frames: 5");
        assert!(parse_bvh(&bad).is_err());
    }

    #[test]
    fn small_values_keep_six_significant_digits() {
        let s = fmt_num(0.000123456789);
        assert!((s.parse::<f64>().unwrap() / 0.000123456789 - 1.0).abs() < 5e-6);
        assert_eq!(fmt_num(-12.5), "-12.500000");
    }
}
