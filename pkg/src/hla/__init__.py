"""Higher-order linear attention: streaming kernels, scans and oracles."""

from .ahla import StateA, ahla_forward, ahla_step, stateA_init
from .core import (
    DegenerateDenominatorError,
    DimensionError,
    HLAError,
    KernelConfig,
    OutputBatch,
    TensorFormatError,
    TokenBatch,
    UndefinedKernelError,
    max_rel_err,
    w1_batch,
)
from .grad import GradTriple, fd_gradient, hla2_backward
from .hla2 import State2, hla2_forward, hla2_output, hla2_unmasked_forward, state2_init, state2_step
from .hla3 import State3, hla3_forward, hla3_step, state3_init
from .hot1 import decode_tensor, encode_tensor, read_tensor, write_tensor
from .oracle import oracle_ahla, oracle_hla2, oracle_hla2_unmasked, oracle_hla3, oracle_linattn_identity
from .rng import gauss_tokens, splitmix64_next
from .scan import (
    Segment2,
    SegmentA,
    ahla_chunked_forward,
    blelloch_scan,
    hla2_chunked_forward,
    seg2_combine,
    seg2_from_token,
    seg2_identity,
    segA_combine,
    segA_from_token,
    segA_identity,
)

