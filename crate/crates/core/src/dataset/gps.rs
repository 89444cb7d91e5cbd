use serde::Serialize;

use super::{GpsPosition, ManifestRecord};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters on a spherical Earth.
pub fn haversine_m(a: &GpsPosition, b: &GpsPosition) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let s = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Correspondence {
    pub dark_id: String,
    pub day_id: String,
    pub distance_m: f64,
}

/// Nearest daytime record for each dark record, in dark-record order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceTable {
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceTable {
    pub fn get(&self, dark_id: &str) -> Option<&Correspondence> {
        self.entries.iter().find(|c| c.dark_id == dark_id)
    }

    /// CSV with header `dark_id,day_id,distance_m`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Row {
            dark_id: String,
            day_id: String,
            distance_m: f64,
        }
        let mut r = csv::Reader::from_reader(input);
        let entries = r
            .deserialize::<Row>()
            .map(|row| {
                row.map(|r| Correspondence {
                    dark_id: r.dark_id,
                    day_id: r.day_id,
                    distance_m: r.distance_m,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { entries })
    }
}

/// Assigns each dark record the closest day record by GPS. Equal distances
/// go to the lexicographically smaller day id.
pub fn gps_nearest_correspondence(dark: &[ManifestRecord], day: &[ManifestRecord]) -> Result<CorrespondenceTable> {
    if day.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let entries = dark
        .iter()
        .map(|d| {
            let (best, dist) = day
                .iter()
                .map(|r| (r, haversine_m(&d.gps, &r.gps)))
                .min_by(|(ra, da), (rb, db)| da.total_cmp(db).then_with(|| ra.id.cmp(&rb.id)))
                .expect("day records are nonempty");
            Correspondence {
                dark_id: d.id.clone(),
                day_id: best.id.clone(),
                distance_m: dist,
            }
        })
        .collect();
    Ok(CorrespondenceTable { entries })
}
