//! Mix-zone privacy simulator.
//!
//! A mix zone is a region (an intersection, say) where vehicles stop
//! broadcasting and change pseudonyms, so an eavesdropper watching the
//! gates has to guess which exiting pseudonym continues which entering
//! one. This crate models such a zone end to end:
//!
//! - [`zone`]: gates, lanes, the exit-probability matrix, per-lane
//!   vehicle counts, and travel-time distributions.
//! - [`wmap`]: the mapping-weight matrix a zone controller uses to spot
//!   weakly mixed gate pairs, and the resulting plan for activating
//!   roadside transceivers that fake pseudonym changes on quiet lanes.
//! - [`sim`]: a discrete-event traffic simulation producing the
//!   observation stream an eavesdropper would record, plus ground truth.
//! - [`adversary`]: a global linking attack over that stream and the
//!   anonymity metrics used to judge the defense.

pub mod adversary;
pub mod sim;
pub mod wmap;
pub mod zone;
