//! Line-oriented point annotation files.
//!
//! Each non-blank, non-`#` line is either `class_id,x,y` (a point) or
//! `class_id,x1,y1,x2,y2` (a box, stored as its center). Coordinates are
//! image pixels, `x` along columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::groundtruth::{Point, PointAnnotationSet};

/// Maps source class ids onto model classes. Source ids absent from the map
/// are dropped, which is how unused categories of a detection dataset are
/// skipped while merged ones (e.g. several vehicle types) share a target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMap(pub BTreeMap<usize, usize>);

impl ClassMap {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        ClassMap(pairs.into_iter().collect())
    }
}

pub fn box_center(x1: f64, y1: f64, x2: f64, y2: f64) -> Point {
    Point::snapped((x1 + x2) / 2.0, (y1 + y2) / 2.0)
}

/// Parses annotation text for an image of the given extent.
pub fn parse_annotations(
    text: &str,
    source: &Path,
    image_id: &str,
    (height, width): (usize, usize),
    num_classes: usize,
    class_map: Option<&ClassMap>,
) -> Result<PointAnnotationSet> {
    let mut ann = PointAnnotationSet::empty(image_id, num_classes, height, width);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: String| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            detail,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let class: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err(format!("bad coordinate in {line:?}")))?;
        let point = match nums[..] {
            [x, y] => Point::snapped(x, y),
            [x1, y1, x2, y2] => box_center(x1, y1, x2, y2),
            _ => return Err(err(format!("expected 3 or 5 fields, got {}", fields.len()))),
        };
        let target = match class_map {
            Some(map) => match map.0.get(&class) {
                Some(&t) => t,
                None => continue,
            },
            None => class,
        };
        if target >= num_classes {
            return Err(Error::ClassMismatch {
                model: num_classes,
                data: target + 1,
            });
        }
        if !ann.contains(point) {
            return Err(err(format!(
                "point ({}, {}) outside {width}x{height} image",
                point.x, point.y
            )));
        }
        ann.classes[target].push(point);
    }
    Ok(ann)
}

pub fn load_annotations(
    path: &Path,
    extent: (usize, usize),
    num_classes: usize,
    class_map: Option<&ClassMap>,
) -> Result<PointAnnotationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    parse_annotations(&text, path, id, extent, num_classes, class_map)
}

/// Point-form text. Floats use shortest round-trip formatting, so reading
/// the text back reproduces every coordinate exactly.
pub fn format_annotations(ann: &PointAnnotationSet) -> String {
    let mut s = String::new();
    for (k, pts) in ann.classes.iter().enumerate() {
        for p in pts {
            let _ = writeln!(s, "{k},{},{}", p.x, p.y);
        }
    }
    s
}

pub fn write_annotations(path: &Path, ann: &PointAnnotationSet) -> Result<()> {
    fs::write(path, format_annotations(ann)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, n: usize, map: Option<&ClassMap>) -> Result<PointAnnotationSet> {
        parse_annotations(text, Path::new("a.txt"), "a", (64, 64), n, map)
    }

    #[test]
    fn box_becomes_center() {
        let ann = parse("0,10,10,30,50\n", 1, None).unwrap();
        assert_eq!(ann.classes[0], vec![Point::new(20.0, 30.0)]);
    }

    #[test]
    fn empty_file_gives_empty_lists() {
        let ann = parse("", 3, None).unwrap();
        assert_eq!(ann.classes, vec![Vec::<Point>::new(); 3]);
        let ann = parse("# header only\n\n", 2, None).unwrap();
        assert_eq!(ann.counts(), vec![0, 0]);
    }

    #[test]
    fn mixed_field_counts() {
        let ann = parse("0,1,2\n1,0,0,4,4\n0, 3.5 , 4.25\n", 2, None).unwrap();
        assert_eq!(ann.classes[0], vec![Point::new(1.0, 2.0), Point::new(3.5, 4.25)]);
        assert_eq!(ann.classes[1], vec![Point::new(2.0, 2.0)]);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [("0,1,2\n0,1\n", 2), ("0,1,2\n\nx,1,2\n", 3), ("0,1,2,3\n", 1), ("0,a,2\n", 1)] {
            match parse(text, 1, None) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn out_of_bounds_and_bad_class_rejected() {
        assert!(parse("0,64,3\n", 1, None).is_err());
        assert!(parse("0,-0.5,3\n", 1, None).is_err());
        assert!(matches!(parse("2,1,1\n", 2, None), Err(Error::ClassMismatch { model: 2, data: 3 })));
    }

    #[test]
    fn class_map_merges_and_drops() {
        // pedestrian(1)+people(2) -> person(1); car(4), van(5) -> vehicle(0); others dropped
        let map = ClassMap::new([(1, 1), (2, 1), (4, 0), (5, 0)]);
        let ann = parse("1,1,1\n2,2,2\n4,3,3\n5,4,4\n9,5,5\n", 2, Some(&map)).unwrap();
        assert_eq!(ann.counts(), vec![2, 2]);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            pts in proptest::collection::vec((0usize..3, 0.0f64..63.0, 0.0f64..63.0), 0..40)
        ) {
            let mut ann = PointAnnotationSet::empty("a", 3, 64, 64);
            for (k, x, y) in pts {
                ann.classes[k].push(Point::snapped(x, y));
            }
            let back = parse(&format_annotations(&ann), 3, None).unwrap();
            prop_assert_eq!(back, ann);
        }
    }
}
