"""KG-augmented tool-use evaluation.

Ground LLM-generated relation paths in a family knowledge graph (tolerating
hallucinated relations), feed the extracted sub-KG to a tool-use model, and
grade both steps with rule-based metrics.
"""

from kgetool.dataset import (
    Sample,
    ToolCall,
    ToolDoc,
    examine_call,
    hop_histogram,
    load_dataset,
    load_tools,
    validate_against_kg,
)
from kgetool.evaluator import (
    EvalReport,
    ExtractionMetrics,
    ToolUseMetrics,
    aggregate,
    extract_tool_call,
    grade_extraction,
    grade_tool_use,
)
from kgetool.extraction import (
    ExtractionConfig,
    ExtractionResult,
    extract,
    extract_greedy,
    extract_relation_retrieval,
)
from kgetool.harness import AugmentedQuery, RunConfig, build_augmented_query, docs_baseline, run_corpus
from kgetool.kg import (
    Document,
    GroundedPath,
    KnowledgeGraph,
    RelationPath,
    Triple,
    entities_of,
    ground_exact,
    links_to_documents,
    load_kg,
    load_kg_file,
    out_edges,
)
from kgetool.llm import ChatRequest, ChatResponse, Gateway, PromptTemplate
from kgetool.search_parser import FormatError, ParsedSearches, parse_kg_search, render_search
from kgetool.similarity import LexicalSimilarity, SimilarityProvider, retrieve_documents

__version__ = "0.1.0"

__all__ = [
    "AugmentedQuery", "ChatRequest", "ChatResponse", "Document", "EvalReport", "ExtractionConfig",
    "ExtractionMetrics", "ExtractionResult", "FormatError", "Gateway", "GroundedPath", "KnowledgeGraph",
    "LexicalSimilarity", "ParsedSearches", "PromptTemplate", "RelationPath", "RunConfig", "Sample",
    "SimilarityProvider", "ToolCall", "ToolDoc", "ToolUseMetrics", "Triple", "aggregate",
    "build_augmented_query", "docs_baseline", "entities_of", "examine_call", "extract", "extract_greedy",
    "extract_relation_retrieval", "extract_tool_call", "grade_extraction", "grade_tool_use", "ground_exact",
    "hop_histogram", "links_to_documents", "load_dataset", "load_kg", "load_kg_file", "load_tools",
    "out_edges", "parse_kg_search", "render_search", "retrieve_documents", "run_corpus", "validate_against_kg",
]
