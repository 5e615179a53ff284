"""Non-parametric token clustering / reconstruction kernels with a mini
transformer pipeline, analytic FLOPs model, resampling baselines, and a
benchmark CLI.

Submodules are imported lazily so the CLI can pin BLAS thread settings before
numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    # grid
    "TokenGrid": "grid",
    "ClusterGrid": "grid",
    "SimilarityReport": "grid",
    "ParameterError": "grid",
    "NonFiniteError": "grid",
    "adaptive_average_pool": "grid",
    "bilinear_resize": "grid",
    "cosine_similarity": "grid",
    # container
    "NamedTensorContainer": "container",
    "save_container": "container",
    "load_container": "container",
    "ContainerError": "container",
    "ContainerFormatError": "container",
    "ContainerPayloadError": "container",
    # clustering
    "ClusteringConfig": "clustering",
    "LocalityMap": "clustering",
    "AssignmentWeights": "clustering",
    "build_locality_map": "clustering",
    "e_step": "clustering",
    "m_step": "clustering",
    "token_clustering": "clustering",
    # reconstruction
    "ReconstructionConfig": "reconstruction",
    "ReconstructionWeights": "reconstruction",
    "compute_relations": "reconstruction",
    "reconstruct": "reconstruction",
    "reconstruct_from_subset": "reconstruction",
    # windowed
    "WindowBatch": "windowed",
    "RpeTable": "windowed",
    "partition_windows": "windowed",
    "merge_windows": "windowed",
    "window_token_clustering": "windowed",
    "window_token_reconstruction": "windowed",
    "interpolate_rpe_table": "windowed",
    # minivit
    "LayerWeights": "minivit",
    "PipelineConfig": "minivit",
    "PipelineTrace": "minivit",
    "layer_norm": "minivit",
    "mhsa_forward": "minivit",
    "transformer_layer_forward": "minivit",
    "run_pipeline": "minivit",
    "measure_fidelity": "minivit",
    "random_layer_weights": "minivit",
    "random_pipeline_weights": "minivit",
    "pipeline_weights_to_container": "minivit",
    "pipeline_weights_from_container": "minivit",
    # baselines
    "SelectionResult": "baselines",
    "aap_reduce": "baselines",
    "bilinear_expand": "baselines",
    "run_pipeline_pooled": "baselines",
    "uniform_downsample_tokens": "baselines",
    "select_topk_tokens": "baselines",
    "sparsify_and_reconstruct": "baselines",
    "attention_column_scores": "baselines",
    # flops
    "ArchSpec": "flops",
    "FlopsReport": "flops",
    "flops_transformer_layer": "flops",
    "flops_clustering": "flops",
    "flops_reconstruction": "flops",
    "flops_pipeline": "flops",
    # synth / bench
    "generate_synthetic_tokens": "synth",
    "RunConfig": "bench",
    "BenchReport": "bench",
    "cmd_run": "bench",
    "cmd_sweep": "bench",
    "cmd_flops": "bench",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
