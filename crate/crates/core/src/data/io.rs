//! ASCII point files and binary PLY export.
//!
//! ASCII: one point per line, `x y z r g b label` or
//! `x y z r g b nx ny nz label`; `#` starts a comment line; label `-1`
//! marks an unlabeled point.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::{class_color, RoomCloud, MAX_CLASSES};
use crate::error::{Error, Result};

pub fn load_cloud(path: impl AsRef<Path>) -> Result<RoomCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, path)
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<RoomCloud> {
    let mut room = RoomCloud::default();
    let mut normals = Vec::new();
    let mut arity = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 && fields.len() != 10 {
            return Err(err(format!(
                "expected 7 or 10 fields, found {}",
                fields.len()
            )));
        }
        match arity {
            None => arity = Some(fields.len()),
            Some(a) if a != fields.len() => {
                return Err(err(format!(
                    "line has {} fields but earlier lines have {a}",
                    fields.len()
                )))
            }
            _ => {}
        }
        let float = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("'{s}' is not a finite number")))
        };
        let channel = |s: &str| -> Result<u8> {
            s.parse::<u8>()
                .map_err(|_| err(format!("'{s}' is not a color value in 0..=255")))
        };
        room.positions
            .push([float(fields[0])?, float(fields[1])?, float(fields[2])?]);
        room.colors.push([
            channel(fields[3])?,
            channel(fields[4])?,
            channel(fields[5])?,
        ]);
        if fields.len() == 10 {
            normals.push([float(fields[6])?, float(fields[7])?, float(fields[8])?]);
        }
        let label_field = fields[fields.len() - 1];
        let label: i64 = label_field
            .parse()
            .map_err(|_| err(format!("'{label_field}' is not an integer label")))?;
        room.labels.push(match label {
            -1 => None,
            l if (0..MAX_CLASSES as i64).contains(&l) => Some(l as usize),
            l => return Err(err(format!("unknown label id {l}"))),
        });
    }
    if arity == Some(10) {
        room.normals = Some(normals);
    }
    Ok(room)
}

/// The ASCII text for `room`. Floats use the shortest representation that
/// parses back to the same value.
pub fn format_cloud(room: &RoomCloud) -> String {
    let mut out = String::with_capacity(room.len() * 48);
    for i in 0..room.len() {
        let p = room.positions[i];
        let c = room.colors[i];
        let _ = write!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
        if let Some(normals) = &room.normals {
            let n = normals[i];
            let _ = write!(out, " {} {} {}", n[0], n[1], n[2]);
        }
        let label = room.labels[i].map_or(-1, |l| l as i64);
        let _ = writeln!(out, " {label}");
    }
    out
}

pub fn write_cloud(path: impl AsRef<Path>, room: &RoomCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cloud(room)).map_err(|e| Error::io(path, e))
}

/// Writes a binary little-endian PLY with `float x,y,z` and
/// `uchar red,green,blue` taken from the class palette.
pub fn write_ply(
    path: impl AsRef<Path>,
    positions: &[[f64; 3]],
    labels: &[Option<usize>],
) -> Result<()> {
    let path = path.as_ref();
    if positions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} positions but {} labels",
            positions.len(),
            labels.len()
        )));
    }
    let mut buf = Vec::with_capacity(256 + positions.len() * 15);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment class-colored segmentation\n\
         element vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        positions.len()
    );
    buf.extend_from_slice(header.as_bytes());
    for (p, l) in positions.iter().zip(labels) {
        for v in p {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&class_color(*l));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Vertices of a PLY file in the layout [`write_ply`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
}

/// Reads back a binary little-endian PLY with exactly the vertex
/// properties `x y z` (float) and `red green blue` (uchar).
pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));

    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(bad("header has no end_header"));
        }
        let line = line.trim_end_matches(['\n', '\r']).to_string();
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    if !lines.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(bad("not binary little-endian 1.0"));
    }
    let mut count = None;
    let mut props = Vec::new();
    for l in &lines[1..] {
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?)
            }
            ["element", ..] => return Err(bad("unexpected element")),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["format", ..] | ["comment", ..] | ["obj_info", ..] => {}
            _ => return Err(bad(&format!("unrecognized header line '{l}'"))),
        }
    }
    let expected: Vec<(String, String)> = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    if props != expected {
        return Err(bad("unexpected vertex properties"));
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::io(PathBuf::from(path), e))?;
    if body.len() != count * 15 {
        return Err(bad(&format!(
            "body has {} bytes, expected {}",
            body.len(),
            count * 15
        )));
    }
    let mut positions = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for rec in body.chunks_exact(15) {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes"));
        positions.push([f(0), f(4), f(8)]);
        colors.push([rec[12], rec[13], rec[14]]);
    }
    Ok(PlyCloud { positions, colors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<RoomCloud> {
        parse_cloud(text, Path::new("mem"))
    }

    #[test]
    fn one_line() {
        let room = parse("0.5 1 2 10 20 30 3\n").unwrap();
        assert_eq!(room.len(), 1);
        assert_eq!(room.positions[0], [0.5, 1.0, 2.0]);
        assert_eq!(room.colors[0], [10, 20, 30]);
        assert_eq!(room.labels[0], Some(3));
        assert!(room.normals.is_none());
    }

    #[test]
    fn empty_and_comments() {
        assert!(parse("").unwrap().is_empty());
        let room = parse("# header\n\n1 2 3 0 0 0 -1\n").unwrap();
        assert_eq!(room.labels, vec![None]);
    }

    #[test]
    fn arity_error_names_line() {
        let err = parse("1 2 3 0 0 0 1\n1 2 3 4 5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_labels_and_colors() {
        assert!(matches!(
            parse("1 2 3 0 0 0 13\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("1 2 3 0 0 0 -2\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("1 2 3 0 256 0 1\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("1 nan 3 0 0 0 1\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("1 2 3 0 0 0 1\n1 2 3 0 0 0 0 0 1 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn normals_columns() {
        let room = parse("1 2 3 4 5 6 0 0 1 2\n").unwrap();
        assert_eq!(room.normals, Some(vec![[0.0, 0.0, 1.0]]));
        assert_eq!(room.labels, vec![Some(2)]);
    }

    #[test]
    fn ply_header_and_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        write_ply(
            &path,
            &[[1.0, 2.0, 3.0], [-0.5, 0.25, 8.0]],
            &[Some(0), None],
        )
        .unwrap();
        let ply = read_ply(&path).unwrap();
        assert_eq!(ply.positions, vec![[1.0, 2.0, 3.0], [-0.5, 0.25, 8.0]]);
        assert_eq!(
            ply.colors,
            vec![super::super::PALETTE[0], super::super::UNLABELED_COLOR]
        );
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"ply\nformat binary_little_endian 1.0\n"));
    }

    fn arb_room() -> impl Strategy<Value = RoomCloud> {
        (0usize..30, any::<bool>()).prop_flat_map(|(n, with_normals)| {
            (
                prop::collection::vec(
                    (
                        any::<f64>().prop_filter("finite", |v| v.is_finite()),
                        -1e3..1e3f64,
                        -1e-9..1e9f64,
                    ),
                    n,
                ),
                prop::collection::vec(any::<[u8; 3]>(), n),
                prop::collection::vec(prop::option::of(0usize..MAX_CLASSES), n),
                prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), n),
            )
                .prop_map(move |(p, c, l, nn)| RoomCloud {
                    positions: p.into_iter().map(|(a, b, c)| [a, b, c]).collect(),
                    colors: c,
                    labels: l,
                    normals: with_normals
                        .then(|| nn.into_iter().map(|(a, b, c)| [a, b, c]).collect()),
                })
        })
    }

    proptest! {
        #[test]
        fn ascii_round_trip_is_lossless(room in arb_room()) {
            let text = format_cloud(&room);
            let back = parse(&text).unwrap();
            if room.is_empty() {
                prop_assert!(back.is_empty());
            } else {
                prop_assert_eq!(&back, &room);
                prop_assert_eq!(format_cloud(&back), text);
            }
        }
    }
}
