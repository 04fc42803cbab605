//! Doc-tests for the guide chapters.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/queues.md")]
pub mod queues {}
#[doc = include_str!("../../../book/src/dropping.md")]
pub mod dropping {}
#[doc = include_str!("../../../book/src/flow-control.md")]
pub mod flow_control {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
