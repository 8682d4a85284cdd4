from .channel import MeasurementSetup, ProtocolState, build_protocol_states, protocol_dims
from .operators import DenseOperator, PureState
from .verify import VerificationSummary, verify_beta, verify_lemma, verify_theorem1
