use std::fmt;

use distilforge_core::Error as CoreError;

/// Failure classes that decide the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Output(String),
    Verify { property: String, detail: String },
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) | Failure::Output(msg) => f.write_str(msg),
            Failure::Verify { property, detail } => {
                write!(f, "property `{property}` failed: {detail}")
            }
        }
    }
}

impl std::error::Error for Failure {}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DIVERGENCE: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

/// Short class name used as the greppable prefix of error lines.
pub fn kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => "config",
                Failure::Output(_) => "output",
                Failure::Verify { .. } => "verify",
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Divergence { .. }
                | CoreError::NonFiniteGradient { .. }
                | CoreError::NonFinite { .. } => "divergence",
                CoreError::Io { .. } => "io",
                CoreError::Format { .. } | CoreError::Csv(_) => "data",
                _ => "config",
            };
        }
    }
    "internal"
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match kind(err) {
        "divergence" => EXIT_DIVERGENCE,
        "verify" => EXIT_VERIFY,
        _ => EXIT_CONFIG,
    }
}

/// The whole error chain on one line: `error[kind]: outer: inner`.
pub fn one_line(err: &anyhow::Error) -> String {
    let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    let mut msg = chain.join(": ");
    msg.retain(|c| c != '\r');
    format!("error[{}]: {}", kind(err), msg.replace('\n', " "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_exit_codes() {
        let div = anyhow::Error::new(CoreError::Divergence {
            stage: 2,
            epoch: 3,
            net: 1,
        })
        .context("seed 4");
        assert_eq!(exit_code(&div), EXIT_DIVERGENCE);
        assert_eq!(
            one_line(&div),
            "error[divergence]: seed 4: training diverged in stage 2, epoch 3, net 1"
        );

        let cfg = anyhow::Error::new(Failure::Config("train.lr: must be positive".into()));
        assert_eq!(exit_code(&cfg), EXIT_CONFIG);

        let ver = anyhow::Error::new(Failure::Verify {
            property: "huber".into(),
            detail: "a\nb".into(),
        });
        assert_eq!(exit_code(&ver), EXIT_VERIFY);
        assert!(!one_line(&ver).contains('\n'));
    }
}
