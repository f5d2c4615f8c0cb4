use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorldError;

const SAKURAMACHI: &str = include_str!("../../data/maps/sakuramachi.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

fn default_radius() -> f64 {
    10.0
}

fn default_speed() -> f64 {
    1.4
}

fn default_tick_seconds() -> f64 {
    1.0
}

/// Named points on a bounded plane. Travel is a straight line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub name: String,
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_radius")]
    pub vicinity_radius: f64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    pub locations: Vec<Location>,
}

impl WorldMap {
    pub fn parse(source: &str) -> Result<Self, WorldError> {
        let map: WorldMap = toml::from_str(source).map_err(|e| WorldError::Map(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| WorldError::Map(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn sakuramachi() -> Self {
        Self::parse(SAKURAMACHI).expect("builtin map is valid")
    }

    /// `sakuramachi` or a path to a map file.
    pub fn resolve(reference: &str) -> Result<Self, WorldError> {
        if reference == "sakuramachi" {
            Ok(Self::sakuramachi())
        } else {
            Self::load(reference)
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.vicinity_radius > 0.0) {
            return Err(WorldError::Map("vicinity_radius must be positive".into()));
        }
        if !(self.speed > 0.0) {
            return Err(WorldError::Map("speed must be positive".into()));
        }
        if !(self.tick_seconds > 0.0) {
            return Err(WorldError::Map("tick_seconds must be positive".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(WorldError::Map("width and height must be positive".into()));
        }
        for (i, loc) in self.locations.iter().enumerate() {
            if loc.name.trim().is_empty() {
                return Err(WorldError::Map(format!("locations[{i}].name is empty")));
            }
            if self.locations[..i].iter().any(|l| l.name.eq_ignore_ascii_case(&loc.name)) {
                return Err(WorldError::Map(format!("duplicate location `{}`", loc.name)));
            }
            if !self.contains(loc.point()) {
                return Err(WorldError::Map(format!("location `{}` is outside the map", loc.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn location(&self, name: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.name.eq_ignore_ascii_case(name))
    }

    pub fn location_names(&self) -> Vec<String> {
        self.locations.iter().map(|l| l.name.clone()).collect()
    }

    /// Name of the location within the vicinity radius of `p`, if any.
    pub fn location_at(&self, p: Point) -> Option<&str> {
        self.locations
            .iter()
            .map(|l| (l, l.point().distance(p)))
            .filter(|(_, d)| *d <= self.vicinity_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l.name.as_str())
    }
}

/// Advances `from` toward `target` by at most `speed`, landing exactly on
/// the target when it is closer than one step.
pub fn move_toward(from: Point, target: Point, speed: f64) -> Point {
    let remaining = from.distance(target);
    if remaining <= speed {
        return target;
    }
    let f = speed / remaining;
    Point::new(from.x + (target.x - from.x) * f, from.y + (target.y - from.y) * f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_map_has_landmarks() {
        let m = WorldMap::sakuramachi();
        for name in ["hotel", "library", "post office", "ramen shop", "izakaya", "flower shop", "clinic", "sushi restaurant"] {
            assert!(m.location(name).is_some(), "{name}");
        }
        assert_eq!(m.vicinity_radius, 10.0);
        assert_eq!(m.speed, 1.4);
    }

    #[test]
    fn movement_clamps_to_target() {
        let p = move_toward(Point::new(0.0, 0.0), Point::new(10.0, 0.0), 3.0);
        assert_eq!(p.distance(Point::new(10.0, 0.0)), 7.0);
        assert_eq!(move_toward(Point::new(0.0, 0.0), Point::new(2.0, 0.0), 3.0), Point::new(2.0, 0.0));
        assert_eq!(move_toward(Point::new(4.0, 4.0), Point::new(4.0, 4.0), 3.0), Point::new(4.0, 4.0));
    }

    #[test]
    fn rejects_bad_maps() {
        let dup = "name='m'\nwidth=10.0\nheight=10.0\n[[locations]]\nname='a'\nx=1.0\ny=1.0\n[[locations]]\nname='A'\nx=2.0\ny=2.0\n";
        assert!(WorldMap::parse(dup).is_err());
        let radius = "name='m'\nwidth=10.0\nheight=10.0\nvicinity_radius=0.0\nlocations=[]\n";
        assert!(WorldMap::parse(radius).is_err());
        let outside = "name='m'\nwidth=10.0\nheight=10.0\n[[locations]]\nname='a'\nx=11.0\ny=1.0\n";
        assert!(WorldMap::parse(outside).is_err());
    }
}
