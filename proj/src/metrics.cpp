#include "diffcap/metrics.hpp"

#include "diffcap/types.hpp"

#include "json.hpp"

#include <cstdio>
#include <sstream>

namespace diffcap {

double MetricsReport::get(const std::string& name) const {
  for (const auto& [k, v] : corpus)
    if (k == name) return v;
  throw std::out_of_range("no metric named " + name);
}

MetricsReport evaluate_captions(std::span<const std::string> ids, std::span<const Sentence> candidates,
                                std::span<const std::vector<Sentence>> references) {
  if (candidates.empty() || candidates.size() != references.size() || ids.size() != candidates.size())
    throw std::invalid_argument("evaluation needs matching non-empty inputs");
  MetricsReport rep;
  for (int n = 1; n <= 4; ++n)
    rep.corpus.emplace_back("bleu" + std::to_string(n), corpus_bleu<std::string>(candidates, references, n));

  const CiderResult cd = cider<std::string>(candidates, references);
  if (cd.degenerate_idf) rep.warnings.push_back("single-document corpus: CIDEr idf is degenerate");
  double rouge_sum = 0.0;
  long exact = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ExampleScores ex;
    ex.id = ids[i];
    for (const auto& w : candidates[i]) ex.candidate += (ex.candidate.empty() ? "" : " ") + w;
    const std::span<const std::vector<std::string>> refs(references[i]);
    if (!candidates[i].empty()) {
      ex.bleu4 = bleu<std::string>(candidates[i], refs, 4, true);
      ex.rouge_l = rouge_l<std::string>(candidates[i], refs);
    }
    ex.cider = cd.per_example[i];
    ex.exact_match = std::find(references[i].begin(), references[i].end(), candidates[i]) != references[i].end();
    rouge_sum += ex.rouge_l;
    exact += ex.exact_match;
    rep.examples.push_back(std::move(ex));
  }
  const double n = static_cast<double>(candidates.size());
  rep.corpus.emplace_back("rouge_l", rouge_sum / n);
  rep.corpus.emplace_back("cider", cd.score);
  rep.corpus.emplace_back("distinct_1", distinct_n<std::string>(candidates, 1));
  rep.corpus.emplace_back("distinct_2", distinct_n<std::string>(candidates, 2));
  rep.corpus.emplace_back("exact_match", static_cast<double>(exact) / n);
  return rep;
}

std::string report_json(const MetricsReport& report, const std::string& config_hash, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["examples"] = report.examples.size();
  auto& m = j["metrics"];
  m = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.corpus) m[k] = v;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "id,bleu4,rouge_l,cider,exact_match,candidate\n";
  char buf[128];
  for (const auto& e : report.examples) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%d,", e.bleu4, e.rouge_l, e.cider, e.exact_match ? 1 : 0);
    out << e.id << buf << '"' << e.candidate << "\"\n";
  }
  return out.str();
}

}  // namespace diffcap
