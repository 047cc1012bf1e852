//! Unsupervised screening of immunohistochemically stained gastric slides.
//!
//! A convolutional autoencoder is trained only on windows cropped from the
//! tissue borders of non-infected slides. At inference, border windows whose
//! reconstruction loses red-like pixels are flagged, and the share of flagged
//! windows per slide is thresholded at the ROC point closest to `(0, 1)`.
//!
//! Modules follow the pipeline order:
//! [`imaging`] → [`segmentation`] → [`autoencoder`] → [`anomaly`] →
//! [`diagnosis`] → [`evaluation`], with [`synth`] generating slides with
//! known ground truth.

pub mod anomaly;
pub mod autoencoder;
pub mod diagnosis;
pub mod evaluation;
pub mod imaging;
pub mod segmentation;
pub mod synth;

pub use imaging::{RasterImage, RedFilterConfig};
