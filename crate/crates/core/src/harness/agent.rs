use crate::encoders::ToyObservation;
use crate::env::{ActionChunk, NavPolicy};
use crate::policy::{PolicyError, StreamPolicy, StreamState};

/// Closed-loop driver: one streaming turn per chunk, no prediction branch.
pub struct PolicyAgent<'a> {
    policy: &'a StreamPolicy,
    state: Option<StreamState>,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(policy: &'a StreamPolicy) -> Self {
        PolicyAgent { policy, state: None }
    }
}

impl NavPolicy for PolicyAgent<'_> {
    type Error = PolicyError;

    fn begin(&mut self, instruction: &[u32]) -> Result<(), PolicyError> {
        self.state = Some(self.policy.begin_episode(instruction)?);
        Ok(())
    }

    fn act(&mut self, obs: &ToyObservation) -> Result<ActionChunk, PolicyError> {
        let state = self.state.as_mut().ok_or(PolicyError::EmptyInstruction)?;
        Ok(self.policy.step(state, obs, false)?.actions)
    }
}
