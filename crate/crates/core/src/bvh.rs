//! BVH (HIERARCHY / MOTION) reading and writing.
//!
//! Root position channels become the root translation track; the root
//! `OFFSET` is kept on the skeleton but not added to it. Position channels
//! on non-root joints are accepted and ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::{RotationalMotion, SkeletonTopology};
use crate::quat::{Axis, Quaternion, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Channel {
    Position(Axis),
    Rotation(Axis),
}

impl Channel {
    fn parse(s: &str) -> Option<Self> {
        let axis = match s.chars().next()? {
            'X' | 'x' => Axis::X,
            'Y' | 'y' => Axis::Y,
            'Z' | 'z' => Axis::Z,
            _ => return None,
        };
        match &s[1..].to_ascii_lowercase()[..] {
            "position" => Some(Channel::Position(axis)),
            "rotation" => Some(Channel::Rotation(axis)),
            _ => None,
        }
    }
}

struct Token<'a> {
    text: &'a str,
    line: usize,
}

struct Tokens<'a> {
    toks: Vec<Token<'a>>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&Token<'a>> {
        let t = self.toks.get(self.pos).ok_or_else(|| Error::BvhParse {
            line: self.last_line,
            msg: "unexpected end of hierarchy".into(),
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        let t = self.next()?;
        if t.text.eq_ignore_ascii_case(word) {
            Ok(t.line)
        } else {
            Err(Error::BvhParse {
                line: t.line,
                msg: format!("expected '{word}', found '{}'", t.text),
            })
        }
    }

    fn number(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.text.parse().map_err(|_| Error::BvhParse {
            line: t.line,
            msg: format!("expected a number, found '{}'", t.text),
        })
    }
}

struct Builder {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
    end_sites: Vec<Option<Vec3>>,
    channels: Vec<Vec<Channel>>,
}

fn parse_joint(toks: &mut Tokens, b: &mut Builder, parent: Option<usize>) -> Result<()> {
    let name = toks.next()?.text.to_string();
    let idx = b.names.len();
    b.names.push(name);
    b.parents.push(parent);
    b.offsets.push([0.0; 3]);
    b.end_sites.push(None);
    b.channels.push(Vec::new());
    toks.expect("{")?;
    loop {
        let t = toks.next()?;
        let line = t.line;
        match t.text.to_ascii_uppercase().as_str() {
            "OFFSET" => b.offsets[idx] = [toks.number()?, toks.number()?, toks.number()?],
            "CHANNELS" => {
                let n = toks.number()?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(Error::BvhParse { line, msg: format!("bad channel count {n}") });
                }
                for _ in 0..n as usize {
                    let c = toks.next()?;
                    let ch = Channel::parse(c.text).ok_or_else(|| Error::BvhParse {
                        line: c.line,
                        msg: format!("unknown channel '{}'", c.text),
                    })?;
                    b.channels[idx].push(ch);
                }
            }
            "JOINT" => parse_joint(toks, b, Some(idx))?,
            "END" => {
                toks.expect("Site")?;
                toks.expect("{")?;
                toks.expect("OFFSET")?;
                b.end_sites[idx] = Some([toks.number()?, toks.number()?, toks.number()?]);
                toks.expect("}")?;
            }
            "}" => return Ok(()),
            other => {
                return Err(Error::BvhParse {
                    line,
                    msg: format!("unexpected '{other}' in joint block"),
                })
            }
        }
    }
}

pub fn parse_bvh(text: &str) -> Result<(SkeletonTopology, RotationalMotion)> {
    let lines: Vec<&str> = text.lines().collect();
    let motion_line = lines
        .iter()
        .position(|l| l.trim().eq_ignore_ascii_case("MOTION"))
        .ok_or(Error::BvhParse {
            line: lines.len(),
            msg: "missing MOTION section".into(),
        })?;

    let toks: Vec<Token> = lines[..motion_line]
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |w| Token { text: w, line: i + 1 }))
        .collect();
    let mut toks = Tokens {
        toks,
        pos: 0,
        last_line: motion_line + 1,
    };
    toks.expect("HIERARCHY")?;
    toks.expect("ROOT")?;
    let mut b = Builder {
        names: Vec::new(),
        parents: Vec::new(),
        offsets: Vec::new(),
        end_sites: Vec::new(),
        channels: Vec::new(),
    };
    parse_joint(&mut toks, &mut b, None)?;
    if let Some(t) = toks.peek() {
        return Err(Error::BvhParse {
            line: t.line,
            msg: format!("unexpected '{}' after root block (unbalanced braces?)", t.text),
        });
    }

    // MOTION header
    let mut i = motion_line + 1;
    let header = |i: usize, key: &str| -> Result<f64> {
        let l = lines.get(i).ok_or(Error::BvhParse {
            line: i + 1,
            msg: format!("missing '{key}' line"),
        })?;
        let rest = l
            .trim()
            .strip_prefix(key)
            .ok_or_else(|| Error::BvhParse { line: i + 1, msg: format!("expected '{key}'") })?;
        rest.trim().parse().map_err(|_| Error::BvhParse {
            line: i + 1,
            msg: format!("bad value for '{key}'"),
        })
    };
    while lines.get(i).is_some_and(|l| l.trim().is_empty()) {
        i += 1;
    }
    let frames = header(i, "Frames:")?;
    i += 1;
    let frame_time = header(i, "Frame Time:")?;
    i += 1;
    if frames < 1.0 || frames.fract() != 0.0 {
        return Err(Error::BvhParse { line: i - 1, msg: format!("bad frame count {frames}") });
    }
    if !(frame_time > 0.0) {
        return Err(Error::BvhParse { line: i, msg: "frame time must be positive".into() });
    }
    let frames = frames as usize;
    let n_channels: usize = b.channels.iter().map(Vec::len).sum();

    let mut rotations = Vec::with_capacity(frames);
    let mut root_translation = Vec::with_capacity(frames);
    for (li, line) in lines.iter().enumerate().skip(i) {
        if line.trim().is_empty() {
            continue;
        }
        if rotations.len() == frames {
            return Err(Error::BvhParse {
                line: li + 1,
                msg: format!("frame-count mismatch: more than the declared {frames} frames"),
            });
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::BvhParse { line: li + 1, msg: "non-numeric frame value".into() })?;
        if values.len() != n_channels {
            return Err(Error::BvhParse {
                line: li + 1,
                msg: format!("expected {n_channels} channel values, found {}", values.len()),
            });
        }
        let mut cursor = values.iter();
        let mut frame = Vec::with_capacity(b.names.len());
        let mut root = [0.0; 3];
        for (j, chans) in b.channels.iter().enumerate() {
            let mut euler = Vec::with_capacity(3);
            for ch in chans {
                let v = *cursor.next().expect("length checked");
                match ch {
                    Channel::Rotation(a) => euler.push((*a, v)),
                    Channel::Position(a) if j == 0 => root[*a as usize] = v,
                    Channel::Position(_) => {}
                }
            }
            frame.push(Quaternion::from_euler_deg(&euler));
        }
        rotations.push(frame);
        root_translation.push(root);
    }
    if rotations.len() != frames {
        return Err(Error::BvhParse {
            line: lines.len(),
            msg: format!("frame-count mismatch: declared {frames}, found {}", rotations.len()),
        });
    }

    let mut skel = SkeletonTopology::new(b.names, b.parents, b.offsets)?;
    skel.end_sites = b.end_sites;
    skel.feet = guess_feet(&skel);
    let motion = RotationalMotion::new(rotations, root_translation, 1.0 / frame_time)?.hemisphere_aligned();
    Ok((skel, motion))
}

pub fn read_bvh(path: &Path) -> Result<(SkeletonTopology, RotationalMotion)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bvh(&text).map_err(|e| match e {
        Error::BvhParse { line, msg } => Error::BvhParse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

/// Picks `(left, right)` foot joints by name ("foot", "ankle", "toe").
pub fn guess_feet(skel: &SkeletonTopology) -> Option<(usize, usize)> {
    let find = |side: &[&str]| {
        ["foot", "ankle", "toe"].iter().find_map(|part| {
            skel.names.iter().position(|n| {
                let l = n.to_ascii_lowercase();
                l.contains(part) && side.iter().any(|s| l.starts_with(s) || l.contains(&format!("_{s}")))
            })
        })
    };
    Some((find(&["left", "l_", "l"])?, find(&["right", "r_", "r"])?))
}

/// Writes ZYX Euler channels with six decimals; the root also gets
/// position channels. Joints must be stored in depth-first order for the
/// output to re-parse with identical indices.
pub fn write_bvh(skel: &SkeletonTopology, motion: &RotationalMotion) -> Result<String> {
    crate::kinematics::check_joints(skel, motion)?;
    let mut out = String::from("HIERARCHY\n");
    let mut order = Vec::with_capacity(skel.num_joints());
    write_joint(skel, 0, 0, &mut out, &mut order);
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", motion.frames());
    let _ = writeln!(out, "Frame Time: {:.8}", 1.0 / motion.fps);
    for (frame, root) in motion.rotations.iter().zip(&motion.root_translation) {
        let mut row = Vec::with_capacity(3 + 3 * order.len());
        row.extend(root.iter().map(|v| format!("{v:.6}")));
        for &j in &order {
            let (z, y, x) = frame[j].to_euler_zyx_deg();
            row.extend([z, y, x].iter().map(|v| format!("{:.6}", v + 0.0)));
        }
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}

fn write_joint(skel: &SkeletonTopology, j: usize, depth: usize, out: &mut String, order: &mut Vec<usize>) {
    let pad = "\t".repeat(depth);
    let kind = if j == 0 { "ROOT" } else { "JOINT" };
    order.push(j);
    let o = skel.offsets[j];
    let _ = writeln!(out, "{pad}{kind} {}", skel.names[j]);
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}\tOFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
    if j == 0 {
        let _ = writeln!(out, "{pad}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation");
    } else {
        let _ = writeln!(out, "{pad}\tCHANNELS 3 Zrotation Yrotation Xrotation");
    }
    for c in skel.children(j).collect::<Vec<_>>() {
        write_joint(skel, c, depth + 1, out, order);
    }
    if let Some(e) = skel.end_sites[j] {
        let _ = writeln!(out, "{pad}\tEnd Site");
        let _ = writeln!(out, "{pad}\t{{");
        let _ = writeln!(out, "{pad}\t\tOFFSET {:.6} {:.6} {:.6}", e[0], e[1], e[2]);
        let _ = writeln!(out, "{pad}\t}}");
    }
    let _ = writeln!(out, "{pad}}}");
}

pub fn save_bvh(path: &Path, skel: &SkeletonTopology, motion: &RotationalMotion) -> Result<()> {
    let text = write_bvh(skel, motion)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
