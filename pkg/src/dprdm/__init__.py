"""Differentially private k-NN retrieval for retrieval-augmented generation."""

from .accountant import (DEFAULT_ORDERS, DpGuarantee, RdpCurve, compose, mechanism_rdp,
                         quadrature_rdp, sgm_rdp, to_approx_dp)
from .calibrate import (TradeoffPoint, calibrate_k, calibrate_q, min_epsilon_over_kq,
                        sweep)
from .index import (EmbeddingRecord, NeighborSet, RetrievalIndex, SubsetMask, build_index,
                    knn, load_index, poisson_subsample)
from .ledger import (Authorization, BudgetExhausted, BudgetLedger, BudgetTarget,
                     ledger_open)
from .mechanism import (PrivacyParams, PrivatizedConditioning, interpolate, leakage_probe,
                        noisy_aggregate, private_retrieve)
from .metrics import coverage, density, nnd_k

__version__ = "0.1.0"
