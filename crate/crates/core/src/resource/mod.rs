//! Resource estimation: EBOPs (effective bit operations), calibration,
//! canonical signed digits and the regularized training loss.
//!
//! EBOPs sums `b_i * b_j` over every multiplication and `max(b_k, b_l)` over
//! every explicit addition (here the bias add of each output lane). A
//! multiplication between a weight and an activation costs the product of
//! their widths; a weight quantized to zero costs nothing.

mod calibrate;
mod csd;
mod ebops;
mod loss;

pub use calibrate::{
    activation_format, bias_format, calibrate, freeze, weight_group_formats, CalibrationResult,
    LayerCalibration,
};
pub use csd::Csd;
pub use ebops::{
    ebops_exact, ebops_of_deployed, ebops_surrogate, ebops_surrogate_value, lut_from_ebops,
    EbopsReport, LayerEbops, SurrogateEbops, DEFAULT_DSP_COEFFICIENT, LUT_EXPONENT,
};
pub use loss::{bitwidth_l1, total_loss, LossConfig};
