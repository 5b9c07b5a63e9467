use super::{count_mults, count_params, ArchitectureSpec};
use crate::error::Result;

/// Teacher-to-student size and cost ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionReport {
    pub teacher_params: u64,
    pub student_params: u64,
    pub teacher_mults: u64,
    pub student_mults: u64,
    /// `teacher_params / student_params`.
    pub compression_rate: f64,
    /// `teacher_mults / student_mults`.
    pub analytic_speedup: f64,
    /// `teacher_seconds / student_seconds`, when timings were supplied.
    pub measured_speedup: Option<f64>,
}

impl CompressionReport {
    pub fn from_counts(
        (teacher_params, student_params): (u64, u64),
        (teacher_mults, student_mults): (u64, u64),
        timing: Option<(f64, f64)>,
    ) -> Self {
        CompressionReport {
            teacher_params,
            student_params,
            teacher_mults,
            student_mults,
            compression_rate: teacher_params as f64 / student_params as f64,
            analytic_speedup: teacher_mults as f64 / student_mults as f64,
            measured_speedup: timing.map(|(t, s)| t / s),
        }
    }
}

pub fn speedup_and_compression(
    teacher: &ArchitectureSpec,
    student: &ArchitectureSpec,
    timing: Option<(f64, f64)>,
) -> Result<CompressionReport> {
    Ok(CompressionReport::from_counts(
        (count_params(teacher)?, count_params(student)?),
        (count_mults(teacher)?, count_mults(student)?),
        timing,
    ))
}
