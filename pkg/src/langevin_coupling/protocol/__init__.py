from .types import (
    CoupledState,
    CouplingRecord,
    InitCondition,
    InstrumentConfig,
    SampleFailure,
    Scheme,
    SimParams,
)
