"""Multi-party authorization for device configurations.

Proposed configurations become deployable only after every reviewer named
by the target's policy approves them; disagreements run through a
per-policy mediation strategy; every step is persisted in a peer-endorsed
hash-chain ledger; devices deploy strictly by pulling and verifying
authorized configurations.
"""

__version__ = "0.1.0"

from .errors import CmsError
from .identity import Channel, Keystore, Role
from .node import CmsNode
from .policy import PolicySet, StepKind, load_policies
from .workflow import ConfigProposal, ProposalStatus, Verdict, WorkflowState

__all__ = [
    "Channel",
    "CmsError",
    "CmsNode",
    "ConfigProposal",
    "Keystore",
    "PolicySet",
    "ProposalStatus",
    "Role",
    "StepKind",
    "Verdict",
    "WorkflowState",
    "load_policies",
    "__version__",
]
