//! Verification policies a notary applies to sampled data: does the
//! claimed payload agree with what the seller's store really holds?

use serde::Deserialize;

use crate::exchange::{OntologySchema, Record, Value};

pub type Sections = Vec<(String, Vec<Record>)>;

/// Mean-earth-radius haversine distance in kilometers.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0088;
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().atan2((1.0 - a).sqrt())
}

fn default_lat_field() -> String {
    "lat".into()
}
fn default_lon_field() -> String {
    "lon".into()
}

#[derive(Clone, PartialEq, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Verifier {
    /// Every claimed record must literally appear in the truth extraction
    /// for its section. Omissions pass; inventions fail.
    Subset,
    /// Claimed position records must lie within `max_km` of a true record
    /// sharing the same time value.
    Geolocation {
        max_km: f64,
        #[serde(default = "default_lat_field")]
        lat_field: String,
        #[serde(default = "default_lon_field")]
        lon_field: String,
    },
}

impl Verifier {
    /// Check a decoded payload against the truth extraction. Sections must
    /// line up one-to-one with the truth (same entities, same order), which
    /// both sides derive from the same order.
    pub fn verify(&self, claimed: &Sections, truth: &Sections, schema: &OntologySchema) -> bool {
        if claimed.len() != truth.len() {
            return false;
        }
        claimed
            .iter()
            .zip(truth)
            .all(|((entity, records), (true_entity, true_records))| {
                entity == true_entity
                    && records.iter().all(|record| {
                        self.record_ok(entity, record, true_records, schema)
                    })
            })
    }

    fn record_ok(
        &self,
        entity: &str,
        record: &Record,
        truth: &[Record],
        schema: &OntologySchema,
    ) -> bool {
        match self {
            Verifier::Subset => truth.contains(record),
            Verifier::Geolocation {
                max_km,
                lat_field,
                lon_field,
            } => {
                let Some(time_field) = schema
                    .entities
                    .get(entity)
                    .and_then(|e| e.time_field.as_deref())
                else {
                    return false;
                };
                let coord = |r: &Record, field: &str| r.get(field).and_then(Value::as_f64);
                let (Some(lat), Some(lon), Some(time)) = (
                    coord(record, lat_field),
                    coord(record, lon_field),
                    record.get(time_field).cloned(),
                ) else {
                    return false;
                };
                truth.iter().any(|t| {
                    t.get(time_field) == Some(&time)
                        && match (coord(t, lat_field), coord(t, lon_field)) {
                            (Some(tlat), Some(tlon)) => {
                                haversine_km(lat, lon, tlat, tlon) <= *max_km
                            }
                            _ => false,
                        }
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::EntitySchema;

    fn record(pairs: &[(&str, Value)]) -> Record {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn haversine_matches_known_distances() {
        // Paris <-> London, about 344 km.
        let d = haversine_km(48.8566, 2.3522, 51.5074, -0.1278);
        assert!((d - 344.0).abs() < 4.0, "got {d}");
        // A point is at distance zero from itself.
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
        // Antipodal points sit half the circumference apart.
        let d = haversine_km(0.0, 0.0, 0.0, 180.0);
        assert!((d - 20_015.0).abs() < 10.0, "got {d}");
        // Symmetry.
        assert_eq!(
            haversine_km(48.8566, 2.3522, 51.5074, -0.1278),
            haversine_km(51.5074, -0.1278, 48.8566, 2.3522)
        );
    }

    #[test]
    fn subset_accepts_omissions_and_rejects_inventions() {
        let schema = OntologySchema::default();
        let truth: Sections = vec![(
            "calls".into(),
            vec![
                record(&[("day", Value::Int(1)), ("n", Value::Int(4))]),
                record(&[("day", Value::Int(2)), ("n", Value::Int(6))]),
            ],
        )];
        let exact = truth.clone();
        assert!(Verifier::Subset.verify(&exact, &truth, &schema));

        let partial: Sections = vec![("calls".into(), vec![truth[0].1[0].clone()])];
        assert!(Verifier::Subset.verify(&partial, &truth, &schema));

        let mut forged = truth.clone();
        forged[0]
            .1
            .push(record(&[("day", Value::Int(3)), ("n", Value::Int(99))]));
        assert!(!Verifier::Subset.verify(&forged, &truth, &schema));

        let wrong_entity: Sections = vec![("texts".into(), truth[0].1.clone())];
        assert!(!Verifier::Subset.verify(&wrong_entity, &truth, &schema));
    }

    fn geo_schema() -> OntologySchema {
        let mut schema = OntologySchema::default();
        schema.entities.insert(
            "ping".into(),
            EntitySchema {
                time_field: Some("day".into()),
            },
        );
        schema
    }

    fn ping(day: i64, lat: f64, lon: f64) -> Record {
        record(&[
            ("day", Value::Int(day)),
            ("lat", Value::Float(lat)),
            ("lon", Value::Float(lon)),
        ])
    }

    #[test]
    fn geolocation_tolerates_jitter_within_the_radius() {
        let schema = geo_schema();
        let verifier = Verifier::Geolocation {
            max_km: 5.0,
            lat_field: "lat".into(),
            lon_field: "lon".into(),
        };
        let truth: Sections = vec![("ping".into(), vec![ping(1, 48.8566, 2.3522)])];

        // About 1.3 km away on the same day: fine.
        let near: Sections = vec![("ping".into(), vec![ping(1, 48.8566, 2.37)])];
        assert!(verifier.verify(&near, &truth, &schema));

        // Same spot, wrong day: no matching true record.
        let wrong_day: Sections = vec![("ping".into(), vec![ping(2, 48.8566, 2.3522)])];
        assert!(!verifier.verify(&wrong_day, &truth, &schema));

        // London on a Paris day is far outside 5 km.
        let far: Sections = vec![("ping".into(), vec![ping(1, 51.5074, -0.1278)])];
        assert!(!verifier.verify(&far, &truth, &schema));

        // Records missing coordinates fail closed.
        let bare: Sections = vec![(
            "ping".into(),
            vec![record(&[("day", Value::Int(1))])],
        )];
        assert!(!verifier.verify(&bare, &truth, &schema));
    }

    #[test]
    fn verifier_configs_deserialize() {
        let v: Verifier = serde_json::from_str(r#"{"type":"subset"}"#).unwrap();
        assert_eq!(v, Verifier::Subset);
        let v: Verifier =
            serde_json::from_str(r#"{"type":"geolocation","max_km":2.5}"#).unwrap();
        assert_eq!(
            v,
            Verifier::Geolocation {
                max_km: 2.5,
                lat_field: "lat".into(),
                lon_field: "lon".into(),
            }
        );
    }
}
