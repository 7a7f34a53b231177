from modrl.graph.build import (ApiPlan, BuildResult, BuildStats, DeviceMap, OpRegistry,
                               apply_replica_strategy, build, check_input_completeness)
from modrl.graph.component import Component, api, graph_fn
from modrl.graph.executor import ComponentTest, GraphExecutor, build_executor, component_test
from modrl.graph.meta import ComponentGraph, OpRecord, build_meta_graph, export_dot

__all__ = [
    "Component", "api", "graph_fn", "ComponentGraph", "OpRecord", "build_meta_graph", "export_dot",
    "DeviceMap", "BuildStats", "BuildResult", "OpRegistry", "ApiPlan", "build", "apply_replica_strategy",
    "check_input_completeness",
    "GraphExecutor", "ComponentTest", "component_test", "build_executor",
]
