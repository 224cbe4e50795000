//! Mercury impact chain for coal-fired power plant retrofits.
//!
//! Plant retrofit scenarios become speciated emission reductions
//! ([`inventory`]), gridded deposition through a linear transport surrogate
//! ([`transport`]), food methylmercury and dietary intake changes
//! ([`exposure`]), and health endpoints with source-receptor attribution
//! ([`health`]). [`scenario`] orchestrates a full run; [`ingest`] and
//! [`report`] handle the on-disk formats.

pub mod config;
pub mod demo;
pub mod exposure;
pub mod grid;
pub mod health;
pub mod ingest;
pub mod ids;
pub mod inventory;
pub mod mass;
pub mod report;
pub mod scenario;
pub mod transport;

pub use grid::GridSpec;
pub use ids::{Category, ComboKey, Company, PlantId, ProvinceId};
pub use inventory::{ApcdConfig, CapacityClass, Measure, Plant, PlantStatus, ProvinceParams, Speciation};
pub use mass::{SpeciatedMass, Species};
pub use transport::{DepositionField, EmissionField, SourceReceptorMatrix, TransportParams};
pub use exposure::{ExposureChain, FoodBaseline, IntakeProfile, TradeShares};
pub use health::{CvdForm, DoseResponse, HealthOutcome};
