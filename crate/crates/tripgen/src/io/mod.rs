pub mod geojson;
pub mod tables;
pub mod trips;
