"""Multi-hop knowledge-editing benchmark construction and evaluation."""

from .edits import Instance, build_edit_batch, build_temporal_instance, sample_counterfactual
from .kg import Edit, Entity, KnowledgeGraph, RelationMeta, Triple, diff_snapshots, load_graph, query_objects, restrict_subgraph
from .mello import MelloTrace, run_mello
from .metrics import EvalReport, edit_wise, evaluate, instance_wise, multi_hop
from .retrieval import EditMemory, build_memory, embed, retrieve_top1
from .sampler import ConstraintReport, FactChain, check_constraints, filter_recallable, sample_chain
from .templates import normalize_answer, render_cloze, render_edit_statement, render_multihop_questions

__version__ = "0.1.0"
