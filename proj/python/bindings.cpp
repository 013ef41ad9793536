#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "opsig/cli.hpp"
#include "opsig/harness.hpp"
#include "opsig/matcher.hpp"

namespace py = pybind11;
using namespace opsig;

namespace {

ControlFlowGraph graph_from(const std::vector<std::uint64_t>& hashes,
                            std::vector<std::pair<int, int>> edges) {
  ControlFlowGraph g;
  for (std::size_t i = 0; i < hashes.size(); ++i) {
    g.nodes.push_back({static_cast<int>(i), BlockHash{hashes[i]}, 1, true});
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (auto [a, b] : edges) g.edges.push_back({a, b});
  validate(g);
  return g;
}

std::string table_rows(const MetricsTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"name", r.name},
                    {"precision", r.metrics.precision},
                    {"recall", r.metrics.recall},
                    {"f1", r.metrics.f1},
                    {"signatures", r.signatures},
                    {"off_diagonal", r.off_diagonal}});
  }
  return rows.dump();
}

}  // namespace

PYBIND11_MODULE(_opsig, m) {
  m.doc() = "Opcode-graph malware signatures";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  m.def("fnv1a64", [](const std::string& s) { return fnv1a64(s); });
  m.def("smoothed_idf", &smoothed_idf, py::arg("documents"), py::arg("document_frequency"));

  m.def("parse_cfgs_json", [](const std::string& text) {
    auto p = parse_oplist(text);
    return cfgs_to_json(p.program_id, build_program_cfgs(p)).dump();
  });

  m.def("opcode_stream", [](const std::string& text) { return opcode_stream(parse_oplist(text)); });

  m.def(
      "ngram_counts",
      [](const std::vector<std::string>& seq, int n) {
        std::map<std::string, std::size_t> out;
        for (const auto& [g, c] : extract_ngrams(seq, n).counts) out[ngram_key(g)] = c;
        return out;
      },
      py::arg("sequence"), py::arg("n"));

  m.def(
      "find_monomorphisms",
      [](const std::vector<std::uint64_t>& p_hashes, const std::vector<std::pair<int, int>>& p_edges,
         const std::vector<std::uint64_t>& t_hashes, const std::vector<std::pair<int, int>>& t_edges,
         std::size_t max_maps) {
        MatchOptions o;
        o.max_maps = max_maps;
        auto r = find_monomorphisms(graph_from(p_hashes, p_edges), graph_from(t_hashes, t_edges), o);
        std::vector<std::pair<std::vector<int>, std::size_t>> out;
        for (const auto& mp : r.mappings) out.emplace_back(mp.target_of, mp.agreeing);
        return out;
      },
      py::arg("pattern_hashes"), py::arg("pattern_edges"), py::arg("target_hashes"),
      py::arg("target_edges"), py::arg("max_maps") = 0);

  m.def(
      "run_laboratory_json",
      [](std::size_t hosts, std::size_t extras, std::uint64_t seed, double theta) {
        LabOptions lo;
        lo.hosts = hosts;
        lo.extras = extras;
        lo.seed = seed;
        PipelineOptions po;
        po.scan.theta = theta;
        py::gil_scoped_release release;
        return table_rows(run_laboratory(make_lab_corpus(lo), po));
      },
      py::arg("hosts") = 10, py::arg("extras") = 100, py::arg("seed") = 2024,
      py::arg("theta") = 0.5);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
