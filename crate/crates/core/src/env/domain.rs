use crate::error::{Error, Result};
use crate::image::Rgb;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Seen,
    Unseen,
}

impl DomainRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainRole::Source => "source",
            DomainRole::Seen => "seen",
            DomainRole::Unseen => "unseen",
        }
    }
}

impl std::fmt::Display for DomainRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Filled disc drawn on top of everything else at a fixed pixel position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub rgb: Rgb,
    /// `(column, row)` in pixels.
    pub center: [f64; 2],
    pub radius: f64,
}

impl Blob {
    #[inline]
    pub fn covers(&self, row: usize, col: usize) -> bool {
        let dx = col as f64 + 0.5 - self.center[0];
        let dy = row as f64 + 0.5 - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Rendering factors of one visual domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub role: DomainRole,
    pub background_rgb: Rgb,
    pub road_rgb: Rgb,
    pub car_rgb: Rgb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<Blob>,
}

impl DomainSpec {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if let Some(b) = &self.blob {
            if !(b.radius > 0.0 && b.radius < image_size as f64 / 4.0) {
                return Err(Error::Config(format!(
                    "domain {}: blob radius {} must lie in (0, {})",
                    self.name,
                    b.radius,
                    image_size as f64 / 4.0
                )));
            }
        }
        let p = [self.background_rgb, self.road_rgb, self.car_rgb];
        if p[0] == p[1] || p[0] == p[2] || p[1] == p[2] {
            return Err(Error::Config(format!(
                "domain {}: background, road and car colours must differ",
                self.name
            )));
        }
        Ok(())
    }

    /// Same spec with a different role; used for paired identity checks.
    pub fn with_role(&self, name: &str, role: DomainRole) -> Self {
        Self {
            name: name.to_string(),
            role,
            ..self.clone()
        }
    }
}

pub const PRESETS: &[&str] = &["toyroad-mirror"];

fn spec(name: &str, role: DomainRole, bg: Rgb, road: Rgb, car: Rgb, blob: Option<Blob>) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        role,
        background_rgb: bg,
        road_rgb: road,
        car_rgb: car,
        blob,
    }
}

/// Built-in domain sets. Blob geometry is given for 64-pixel frames.
///
/// `toyroad-mirror`: one source, two palette-only seen targets, two seen
/// targets with palette changes plus a blob, one unseen target combining the
/// seen variations, and one unseen target with a background colour used
/// nowhere else.
pub fn make_domain_set(preset: &str) -> Result<Vec<DomainSpec>> {
    use DomainRole::*;
    match preset {
        "toyroad-mirror" => {
            let cyan_blob = Blob {
                rgb: [40, 200, 200],
                center: [12.0, 12.0],
                radius: 8.0,
            };
            let red_blob = Blob {
                rgb: [220, 20, 20],
                center: [52.0, 14.0],
                radius: 7.0,
            };
            Ok(vec![
                spec("A1", Source, [96, 176, 80], [110, 110, 110], [200, 30, 30], None),
                spec("B1", Seen, [200, 180, 110], [80, 80, 90], [30, 60, 200], None),
                spec("B2", Seen, [70, 110, 170], [150, 150, 150], [230, 200, 40], None),
                spec("B3", Seen, [170, 90, 150], [110, 110, 110], [200, 30, 30], Some(cyan_blob)),
                spec("B4", Seen, [220, 130, 60], [90, 90, 90], [250, 250, 250], Some(red_blob)),
                spec("C1", Unseen, [200, 180, 110], [150, 150, 150], [250, 250, 250], Some(red_blob)),
                spec("C2", Unseen, [128, 64, 160], [110, 110, 110], [200, 30, 30], None),
            ])
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

fn check_unique(specs: &[DomainSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate domain name `{}`", s.name)));
        }
    }
    Ok(())
}

pub fn domain_set_to_json(specs: &[DomainSpec]) -> Result<String> {
    check_unique(specs)?;
    Ok(serde_json::to_string_pretty(specs)?)
}

pub fn domain_set_from_json(text: &str) -> Result<Vec<DomainSpec>> {
    let specs: Vec<DomainSpec> = serde_json::from_str(text)?;
    check_unique(&specs)?;
    Ok(specs)
}
