//! Web-page measurement core: HAR parsing, page timings, protocol and
//! delivery attribution, the measurement record store and reporting.

pub mod delivery;
pub mod har;
pub mod metrics;
pub mod probe;
pub mod protocol;
pub mod record;
pub mod report;
