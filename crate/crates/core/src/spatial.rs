//! Spatial relations between detected objects.
//!
//! Direction relations use a four-quadrant fixed orientation model around the
//! reference object's centroid: LEFT/RIGHT along -x/+x and FRONT/BACK along
//! -y/+y of the image plane (frame top is front). The dominant axis decides;
//! ties go to the x axis.
//!
//! Topology relations follow DE-9IM semantics for closed axis-aligned
//! rectangles, evaluated per axis with exact arithmetic.

use std::fmt;
use std::str::FromStr;

use crate::ingest::BoundingBox;
use crate::vekg::{ObjectNode, VekgGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DirectionRelation {
    Front,
    Back,
    Left,
    Right,
}

impl DirectionRelation {
    pub const ALL: [DirectionRelation; 4] = [
        DirectionRelation::Front,
        DirectionRelation::Back,
        DirectionRelation::Left,
        DirectionRelation::Right,
    ];

    pub fn opposite(self) -> Self {
        match self {
            DirectionRelation::Front => DirectionRelation::Back,
            DirectionRelation::Back => DirectionRelation::Front,
            DirectionRelation::Left => DirectionRelation::Right,
            DirectionRelation::Right => DirectionRelation::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TopologyRelation {
    Disjoint,
    Touch,
    Contains,
    Intersect,
    Within,
    CoveredBy,
    Crosses,
    Overlap,
    Inside,
}

impl TopologyRelation {
    pub const ALL: [TopologyRelation; 9] = [
        TopologyRelation::Disjoint,
        TopologyRelation::Touch,
        TopologyRelation::Contains,
        TopologyRelation::Intersect,
        TopologyRelation::Within,
        TopologyRelation::CoveredBy,
        TopologyRelation::Crosses,
        TopologyRelation::Overlap,
        TopologyRelation::Inside,
    ];

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Relation label carried by a spatial edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialRelation {
    Direction(DirectionRelation),
    Topology(TopologyRelation),
}

impl SpatialRelation {
    pub fn name(self) -> &'static str {
        match self {
            SpatialRelation::Direction(d) => match d {
                DirectionRelation::Front => "FRONT",
                DirectionRelation::Back => "BACK",
                DirectionRelation::Left => "LEFT",
                DirectionRelation::Right => "RIGHT",
            },
            SpatialRelation::Topology(t) => match t {
                TopologyRelation::Disjoint => "DISJOINT",
                TopologyRelation::Touch => "TOUCH",
                TopologyRelation::Contains => "CONTAINS",
                TopologyRelation::Intersect => "INTERSECT",
                TopologyRelation::Within => "WITHIN",
                TopologyRelation::CoveredBy => "COVEREDBY",
                TopologyRelation::Crosses => "CROSSES",
                TopologyRelation::Overlap => "OVERLAP",
                TopologyRelation::Inside => "INSIDE",
            },
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpatialRelation {
    type Err = ();

    /// Case-insensitive; `COVERED_BY` is accepted for `COVEREDBY`.
    fn from_str(s: &str) -> Result<Self, ()> {
        use DirectionRelation as D;
        use TopologyRelation as T;
        let rel = match s.to_ascii_uppercase().replace('_', "").as_str() {
            "FRONT" => SpatialRelation::Direction(D::Front),
            "BACK" => SpatialRelation::Direction(D::Back),
            "LEFT" => SpatialRelation::Direction(D::Left),
            "RIGHT" => SpatialRelation::Direction(D::Right),
            "DISJOINT" => SpatialRelation::Topology(T::Disjoint),
            "TOUCH" => SpatialRelation::Topology(T::Touch),
            "CONTAINS" => SpatialRelation::Topology(T::Contains),
            "INTERSECT" => SpatialRelation::Topology(T::Intersect),
            "WITHIN" => SpatialRelation::Topology(T::Within),
            "COVEREDBY" => SpatialRelation::Topology(T::CoveredBy),
            "CROSSES" => SpatialRelation::Topology(T::Crosses),
            "OVERLAP" => SpatialRelation::Topology(T::Overlap),
            "INSIDE" => SpatialRelation::Topology(T::Inside),
            _ => return Err(()),
        };
        Ok(rel)
    }
}

/// Small set of topology relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopologySet(u16);

impl TopologySet {
    pub fn contains(self, r: TopologyRelation) -> bool {
        self.0 & r.bit() != 0
    }

    pub fn insert(&mut self, r: TopologyRelation) {
        self.0 |= r.bit();
    }

    pub fn iter(self) -> impl Iterator<Item = TopologyRelation> {
        TopologyRelation::ALL.into_iter().filter(move |r| self.contains(*r))
    }
}

impl FromIterator<TopologyRelation> for TopologySet {
    fn from_iter<I: IntoIterator<Item = TopologyRelation>>(iter: I) -> Self {
        let mut s = TopologySet::default();
        for r in iter {
            s.insert(r);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Anything with box geometry.
pub trait Spatial {
    fn bbox(&self) -> &BoundingBox;
}

impl Spatial for BoundingBox {
    fn bbox(&self) -> &BoundingBox {
        self
    }
}

impl Spatial for ObjectNode {
    fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

pub fn centroid(b: &BoundingBox) -> Point {
    Point {
        x: b.x_min + b.width / 2.0,
        y: b.y_min + b.height / 2.0,
    }
}

pub fn direction_relation(subject: &impl Spatial, reference: &impl Spatial) -> Option<DirectionRelation> {
    let s = centroid(subject.bbox());
    let r = centroid(reference.bbox());
    let dx = s.x - r.x;
    let dy = s.y - r.y;
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            DirectionRelation::Left
        } else {
            DirectionRelation::Right
        }
    } else if dy < 0.0 {
        DirectionRelation::Front
    } else {
        DirectionRelation::Back
    })
}

pub fn topology_relation(a: &impl Spatial, b: &impl Spatial) -> TopologySet {
    let (a, b) = (a.bbox(), b.bbox());
    let mut set = TopologySet::default();

    let closed_meet = a.x_min <= b.x_max() && b.x_min <= a.x_max() && a.y_min <= b.y_max() && b.y_min <= a.y_max();
    if !closed_meet {
        set.insert(TopologyRelation::Disjoint);
        return set;
    }
    set.insert(TopologyRelation::Intersect);

    let interiors_meet = a.x_min < b.x_max() && b.x_min < a.x_max() && a.y_min < b.y_max() && b.y_min < a.y_max();
    if !interiors_meet {
        set.insert(TopologyRelation::Touch);
        return set;
    }

    let a_in_b = b.x_min <= a.x_min && a.x_max() <= b.x_max() && b.y_min <= a.y_min && a.y_max() <= b.y_max();
    let b_in_a = a.x_min <= b.x_min && b.x_max() <= a.x_max() && a.y_min <= b.y_min && b.y_max() <= a.y_max();
    if a_in_b {
        set.insert(TopologyRelation::Within);
        set.insert(TopologyRelation::Inside);
        set.insert(TopologyRelation::CoveredBy);
    }
    if b_in_a {
        set.insert(TopologyRelation::Contains);
    }
    if !a_in_b && !b_in_a {
        set.insert(TopologyRelation::Overlap);
    }
    set
}

/// Boolean spatial function: 1 iff `relation` holds for `subject` with
/// `reference` as the frame of reference.
pub fn bsf(relation: SpatialRelation, subject: &impl Spatial, reference: &impl Spatial) -> u8 {
    let holds = match relation {
        SpatialRelation::Direction(d) => direction_relation(subject, reference) == Some(d),
        SpatialRelation::Topology(t) => topology_relation(subject, reference).contains(t),
    };
    u8::from(holds)
}

/// Euclidean distance between centroids, in pixels.
pub fn msf_distance(a: &impl Spatial, b: &impl Spatial) -> f64 {
    let (p, q) = (centroid(a.bbox()), centroid(b.bbox()));
    (p.x - q.x).hypot(p.y - q.y)
}

/// Number of nodes in the frame accepted by `predicate`.
pub fn msf_count(graph: &VekgGraph, predicate: impl Fn(&ObjectNode) -> bool) -> usize {
    graph.nodes.iter().filter(|n| predicate(n)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DetectionRecord;
    use crate::vekg::{build_vekg, IdAllocator, TrackingParams};
    use crate::FrameDetections;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Box of size 2x2 centred on (cx, cy).
    fn at(cx: f64, cy: f64) -> BoundingBox {
        b(cx - 1.0, cy - 1.0, 2.0, 2.0)
    }

    fn set(rels: &[TopologyRelation]) -> TopologySet {
        rels.iter().copied().collect()
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&b(0.0, 0.0, 10.0, 10.0)), Point { x: 5.0, y: 5.0 });
        assert_eq!(centroid(&b(10.0, 20.0, 4.0, 6.0)), Point { x: 12.0, y: 23.0 });
        assert_eq!(centroid(&b(3.0, 4.0, 6.0, 8.0)), Point { x: 6.0, y: 8.0 });
    }

    #[test]
    fn direction_examples() {
        assert_eq!(direction_relation(&at(10.0, 50.0), &at(100.0, 50.0)), Some(DirectionRelation::Left));
        assert_eq!(direction_relation(&at(50.0, 10.0), &at(50.0, 100.0)), Some(DirectionRelation::Front));
        assert_eq!(direction_relation(&at(50.0, 10.0), &at(50.0, 10.0)), None);
        // |dx| == |dy| goes to the x axis
        assert_eq!(direction_relation(&at(10.0, 10.0), &at(20.0, 20.0)), Some(DirectionRelation::Left));
        assert_eq!(direction_relation(&at(50.0, 90.0), &at(50.0, 10.0)), Some(DirectionRelation::Back));
    }

    #[test]
    fn bsf_examples() {
        let left = SpatialRelation::Direction(DirectionRelation::Left);
        assert_eq!(bsf(left, &at(10.0, 50.0), &at(100.0, 50.0)), 1);
        let a = at(10.0, 50.0);
        assert_eq!(bsf(left, &a, &a), 0);
        let disjoint = SpatialRelation::Topology(TopologyRelation::Disjoint);
        assert_eq!(bsf(disjoint, &b(0.0, 0.0, 10.0, 10.0), &b(20.0, 0.0, 10.0, 10.0)), 1);
    }

    #[test]
    fn topology_examples() {
        use TopologyRelation::*;
        assert_eq!(topology_relation(&b(0.0, 0.0, 10.0, 10.0), &b(20.0, 0.0, 10.0, 10.0)), set(&[Disjoint]));
        assert_eq!(topology_relation(&b(0.0, 0.0, 10.0, 10.0), &b(10.0, 0.0, 10.0, 10.0)), set(&[Touch, Intersect]));
        assert_eq!(
            topology_relation(&b(2.0, 2.0, 4.0, 4.0), &b(0.0, 0.0, 10.0, 10.0)),
            set(&[Within, Inside, CoveredBy, Intersect])
        );
        assert_eq!(
            topology_relation(&b(0.0, 0.0, 10.0, 10.0), &b(2.0, 2.0, 4.0, 4.0)),
            set(&[Contains, Intersect])
        );
        assert_eq!(
            topology_relation(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 5.0, 10.0, 10.0)),
            set(&[Overlap, Intersect])
        );
        // corner contact only
        assert_eq!(topology_relation(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 1.0, 1.0, 1.0)), set(&[Touch, Intersect]));
    }

    #[test]
    fn crosses_never_holds() {
        let a = b(0.0, 0.0, 10.0, 2.0);
        let c = b(4.0, -0.0, 2.0, 10.0);
        assert!(!topology_relation(&a, &c).contains(TopologyRelation::Crosses));
        assert_eq!(bsf(SpatialRelation::Topology(TopologyRelation::Crosses), &a, &c), 0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(msf_distance(&at(3.0, 3.0), &at(3.0, 3.0)), 0.0);
        // 3-4-5 triangle
        assert_eq!(msf_distance(&at(10.0, 10.0), &at(13.0, 14.0)), 5.0);
        assert_eq!(msf_distance(&at(1.0, 1.0), &at(4.0, 5.0)), 5.0);
        assert_eq!(msf_distance(&b(0.0, 0.0, 2.0, 2.0), &b(3.0, 4.0, 2.0, 2.0)), 5.0);
    }

    fn graph(labels: &[&str]) -> VekgGraph {
        let dets = labels
            .iter()
            .enumerate()
            .map(|(i, l)| DetectionRecord {
                label: (*l).into(),
                confidence: 0.9,
                bbox: b(i as f64 * 20.0, 0.0, 10.0, 10.0),
                attributes: Default::default(),
                feature: None,
            })
            .collect();
        let frame = FrameDetections {
            producer_id: "P".into(),
            frame_index: 0,
            timestamp_ms: 0,
            detections: dets,
        };
        build_vekg(&frame, None, &TrackingParams::default(), &mut IdAllocator::new())
    }

    #[test]
    fn count_examples() {
        assert_eq!(msf_count(&graph(&[]), |_| true), 0);
        let g = graph(&["Car", "Car", "Person", "Car", "Person"]);
        assert_eq!(msf_count(&g, |n| n.label == "Car"), 3);
        let g = graph(&["Car"; 6]);
        assert!(msf_count(&g, |n| n.label == "Car") > 5);
    }

    #[test]
    fn relation_names_parse() {
        for r in TopologyRelation::ALL {
            let s = SpatialRelation::Topology(r);
            assert_eq!(s.name().parse::<SpatialRelation>(), Ok(s));
        }
        assert_eq!(
            "Left".parse::<SpatialRelation>(),
            Ok(SpatialRelation::Direction(DirectionRelation::Left))
        );
        assert_eq!(
            "Covered_By".parse::<SpatialRelation>(),
            Ok(SpatialRelation::Topology(TopologyRelation::CoveredBy))
        );
        assert!("Above".parse::<SpatialRelation>().is_err());
    }
}
