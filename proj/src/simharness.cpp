#include "rla/simharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <zlib.h>

#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

ShrinkTrunc MismatchTuning::for_margin(double v_prime) const {
    const double u = 1.0 / (2.0 - 2.0 * v_prime);
    return ShrinkTrunc{eta0_fraction * u, d, c_fraction * (u - 0.5), mirror_guardrail};
}

void ExperimentConfig::validate() const {
    if (replications < 1) throw Error("replications must be at least 1");
    if (!mismatch && !comparison) throw Error("no audit method selected");
    if (!(alpha > 0 && alpha < 1)) throw Error("alpha must lie in (0, 1)");
    if (jobs < 1) throw Error("jobs must be at least 1");
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

json as_list(const json& j) { return j.is_array() ? j : json::array({j}); }

}  // namespace

std::uint64_t replication_seed(std::uint64_t master, const std::string& point_id, std::uint64_t r) {
    return mix64(mix64(mix64(master) ^ fnv1a(point_id)) + r);
}

ExperimentConfig experiment_from_json(const json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    try {
        cfg.replications = j.value("replications", 1000);
        cfg.alpha = j.value("alpha", 0.05);
        cfg.master_seed = j.value("seed", std::uint64_t{0});
        cfg.jobs = j.value("jobs", 1);
        const std::string methods = j.value("methods", std::string("mismatch"));
        if (methods == "mismatch") cfg.mismatch = true, cfg.comparison = false;
        else if (methods == "comparison") cfg.mismatch = false, cfg.comparison = true;
        else if (methods == "both") cfg.mismatch = cfg.comparison = true;
        else throw ParseError("methods must be mismatch, comparison or both");

        if (auto e = j.find("estimators"); e != j.end()) {
            if (auto m = e->find("mismatch"); m != e->end()) {
                cfg.mismatch_tuning.eta0_fraction = m->value("eta0_fraction", cfg.mismatch_tuning.eta0_fraction);
                cfg.mismatch_tuning.d = m->value("d", cfg.mismatch_tuning.d);
                cfg.mismatch_tuning.c_fraction = m->value("c_fraction", cfg.mismatch_tuning.c_fraction);
                cfg.mismatch_tuning.mirror_guardrail = m->value("mirror_guardrail", cfg.mismatch_tuning.mirror_guardrail);
            }
            if (auto c = e->find("comparison"); c != e->end()) cfg.comparison_estimator = estimator_from_json(*c);
        }

        std::vector<json> scenarios;
        if (auto g = j.find("grid"); g != j.end()) {
            for (const auto& s : *g) scenarios.push_back(s);
        }
        if (auto p = j.find("product"); p != j.end()) {
            const json kinds = as_list(p->value("kind", json("plurality")));
            const json models = as_list(p->value("model", json("two_over")));
            const json Ns = as_list(p->at("N"));
            const json vs = as_list(p->at("v"));
            const json ms = as_list(p->value("m", json(0)));
            for (const auto& kind : kinds)
                for (const auto& model : models)
                    for (const auto& v : vs)
                        for (const auto& N : Ns)
                            for (const auto& m : ms) {
                                scenarios.push_back({{"kind", kind}, {"model", model}, {"N", N}, {"v", v}, {"m", m}});
                            }
        }
        for (const auto& s : scenarios) {
            ScenarioSpec spec = scenario_from_json(s, base_dir);
            if (!s.contains("seed")) spec.seed = mix64(cfg.master_seed ^ fnv1a(spec.id()));
            cfg.grid.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("experiment config: ") + e.what());
    }
    if (cfg.grid.empty()) throw ParseError("experiment config has an empty grid");
    cfg.validate();
    return cfg;
}

MethodSummary summarize(std::vector<Replication> runs) {
    MethodSummary s;
    const double n = static_cast<double>(runs.size());
    if (runs.empty()) return s;
    double sum = 0, full = 0;
    for (const auto& r : runs) {
        sum += static_cast<double>(r.n_draws);
        if (r.decision == Decision::full_count) full += 1;
    }
    s.mean_n = sum / n;
    double ss = 0;
    for (const auto& r : runs) ss += (static_cast<double>(r.n_draws) - s.mean_n) * (static_cast<double>(r.n_draws) - s.mean_n);
    s.std_error = runs.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
    s.full_count_fraction = full / n;
    s.runs = std::move(runs);
    return s;
}

namespace {

struct Job {
    std::vector<std::vector<double>> columns;
    std::vector<AuditRun::Spec> specs;
    std::string id;
    std::vector<Replication> runs;
    std::size_t point = 0;
    bool is_mismatch = true;
};

/// Runs task(i) for i in [0, count) on `jobs` threads; rethrows the first failure.
template <class F>
void parallel_for(std::size_t count, int jobs, F task) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                task(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = count;
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

void note(GridPointResult& p, const std::string& reason) {
    p.skipped = p.skipped ? *p.skipped + "; " + reason : reason;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    ExperimentResult result;
    result.alpha = config.alpha;
    result.replications = config.replications;
    result.points.resize(config.grid.size());
    std::vector<std::optional<GeneratedInstance>> instances(config.grid.size());

    parallel_for(config.grid.size(), config.jobs, [&](std::size_t i) {
        GridPointResult& p = result.points[i];
        p.spec = config.grid[i];
        p.id = p.spec.id();
        try {
            instances[i] = generate(p.spec);
        } catch (const InfeasibleError& e) {
            p.skipped = e.what();
            return;
        }
        const GeneratedInstance& g = *instances[i];
        p.N = static_cast<std::int64_t>(g.instance.size());
        p.V = g.margin.V;
        p.M = static_cast<std::int64_t>(g.instance.mismatch_count());
        p.reported_outcome_correct = g.reported_outcome_correct;
    });

    std::vector<Job> jobs;
    for (std::size_t i = 0; i < config.grid.size(); ++i) {
        GridPointResult& p = result.points[i];
        if (!instances[i]) continue;
        const GeneratedInstance& g = *instances[i];
        auto add = [&](std::vector<AuditTarget> targets, bool is_mismatch) {
            Job job;
            job.specs = run_specs(targets);
            job.columns = target_columns(g.instance, targets);
            job.id = p.id;
            job.point = i;
            job.is_mismatch = is_mismatch;
            job.runs.resize(static_cast<std::size_t>(config.replications));
            jobs.push_back(std::move(job));
        };
        if (config.mismatch) {
            try {
                add({mismatch_target(g.margin, config.mismatch_tuning.for_margin(to_double(g.margin.v())))}, true);
            } catch (const InfeasibleError& e) {
                note(p, std::string("mismatch: ") + e.what());
            }
        }
        if (config.comparison) {
            try {
                if (!g.assertions) throw InfeasibleError("no assertions for this contest kind");
                std::vector<AuditTarget> targets;
                for (const auto& a : g.assertions->assertions) targets.push_back(comparison_target(a, config.comparison_estimator));
                add(std::move(targets), false);
            } catch (const InfeasibleError& e) {
                note(p, std::string("comparison: ") + e.what());
            }
        }
    }
    instances.clear();

    const auto reps = static_cast<std::size_t>(config.replications);
    parallel_for(jobs.size() * reps, config.jobs, [&](std::size_t task) {
        Job& job = jobs[task / reps];
        const std::size_t r = task % reps;
        AuditConfig audit;
        audit.alpha = config.alpha;
        // Both methods at a point see the same sampling orders.
        audit.seed = replication_seed(config.master_seed, job.id, r);
        AuditResult res = run_audit_columns(job.columns, job.specs, audit);
        job.runs[r] = {audit.seed, res.n_draws, res.decision};
    });

    for (auto& job : jobs) {
        GridPointResult& p = result.points[job.point];
        (job.is_mismatch ? p.mismatch : p.comparison) = summarize(std::move(job.runs));
    }
    return result;
}

namespace {

std::string fmt(double x, const char* spec = "%g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, x);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

struct Cell {
    std::string text;
    bool present = false;
};

struct Table {
    std::vector<std::pair<double, std::int64_t>> rows;
    std::vector<double> ms;
    std::map<std::tuple<double, std::int64_t, double>, Cell> cells;
};

Table build_table(const ExperimentResult& result) {
    Table t;
    std::set<std::pair<double, std::int64_t>> rows;
    std::set<double> ms;
    for (const auto& p : result.points) {
        double v = p.N > 0 ? p.v() : to_double(p.spec.v_target);
        std::int64_t N = p.N > 0 ? p.N : p.spec.N;
        double m = to_double(p.spec.m_target);
        rows.insert({v, N});
        ms.insert(m);
        auto key = std::make_tuple(v, N, m);
        if (t.cells.count(key) && t.cells[key].present) continue;
        Cell c;
        if (p.mismatch) {
            c.present = true;
            c.text = p.mismatch->full_count_fraction == 1.0 ? "F" : fmt(std::round(p.mismatch->mean_n), "%.0f");
        }
        t.cells[key] = c;
    }
    t.rows.assign(rows.begin(), rows.end());
    t.ms.assign(ms.begin(), ms.end());
    return t;
}

std::string m_header(double m) { return m == 0 ? "None" : fmt(m); }

}  // namespace

void write_summary_csv(std::ostream& out, const ExperimentResult& result) {
    out << "id,kind,model,N,v,m,V,M,method,mean_n,std_error,full_count_fraction,replications,skipped\n";
    for (const auto& p : result.points) {
        auto row = [&](const char* method, const MethodSummary* s) {
            out << csv_field(p.id) << ',' << to_string(p.spec.kind) << ',' << to_string(p.spec.model) << ',' << p.N << ','
                << fmt(p.v()) << ',' << fmt(to_double(p.spec.m_target)) << ',' << p.V << ',' << p.M << ',' << method << ',';
            if (s) {
                out << fmt(s->mean_n, "%.3f") << ',' << fmt(s->std_error, "%.3f") << ',' << fmt(s->full_count_fraction, "%.4f")
                    << ',' << s->runs.size();
            } else {
                out << ",,,0";
            }
            out << ',' << csv_field(p.skipped.value_or("")) << '\n';
        };
        if (p.mismatch) row("mismatch", &*p.mismatch);
        if (p.comparison) row("comparison", &*p.comparison);
        if (!p.mismatch && !p.comparison) row("none", nullptr);
    }
}

std::string emit_table2(const ExperimentResult& result) {
    Table t = build_table(result);
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header{"v", "N"};
    for (double m : t.ms) header.push_back(m_header(m));
    grid.push_back(header);
    bool missing = false;
    for (const auto& [v, N] : t.rows) {
        std::vector<std::string> line{fmt(v), std::to_string(N)};
        for (double m : t.ms) {
            auto it = t.cells.find({v, N, m});
            if (it == t.cells.end() || !it->second.present) {
                line.push_back("?");
                missing = true;
            } else {
                line.push_back(it->second.text);
            }
        }
        grid.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : grid)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::ostringstream out;
    for (const auto& line : grid) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            if (c) out << "  ";
            out << std::string(width[c] - line[c].size(), ' ') << line[c];
        }
        out << '\n';
    }
    out << "F: every replication required a full hand count\n";
    if (missing) out << "?: grid point missing or skipped\n";
    return out.str();
}

std::string emit_table2_csv(const ExperimentResult& result) {
    Table t = build_table(result);
    std::ostringstream out;
    out << "v,N";
    for (double m : t.ms) out << ',' << m_header(m);
    out << '\n';
    for (const auto& [v, N] : t.rows) {
        out << fmt(v) << ',' << N;
        for (double m : t.ms) {
            auto it = t.cells.find({v, N, m});
            out << ',' << (it == t.cells.end() || !it->second.present ? "" : it->second.text);
        }
        out << '\n';
    }
    return out.str();
}

void emit_comparison_plotdata(std::ostream& out, const ExperimentResult& result) {
    out << "v,N,m,model,diff\n";
    for (const auto& p : result.points) {
        if (!p.mismatch || !p.comparison) {
            throw Error("grid point " + p.id + " lacks " + (p.mismatch ? "comparison" : "mismatch") + " results" +
                        (p.skipped ? " (" + *p.skipped + ")" : ""));
        }
        const double diff = (p.mismatch->mean_n - p.comparison->mean_n) / static_cast<double>(p.N);
        out << fmt(p.v()) << ',' << p.N << ',' << fmt(to_double(p.spec.m_target)) << ',' << to_string(p.spec.model) << ','
            << fmt(diff, "%.6f") << '\n';
    }
}

void write_raw(const std::filesystem::path& dir, const ExperimentResult& result) {
    std::filesystem::create_directories(dir);
    for (const auto& p : result.points) {
        const auto file = dir / (p.id + ".ndjson.gz");
        gzFile gz = gzopen(file.c_str(), "wb");
        if (!gz) throw Error("cannot write " + file.string());
        auto emit = [&](const char* method, const std::optional<MethodSummary>& s) {
            if (!s) return;
            for (std::size_t r = 0; r < s->runs.size(); ++r) {
                const Replication& rep = s->runs[r];
                std::string line = json{{"method", method},
                                        {"r", r},
                                        {"seed", rep.seed},
                                        {"n_draws", rep.n_draws},
                                        {"decision", std::string(to_string(rep.decision))}}
                                       .dump() +
                                   "\n";
                gzwrite(gz, line.data(), static_cast<unsigned>(line.size()));
            }
        };
        emit("mismatch", p.mismatch);
        emit("comparison", p.comparison);
        if (gzclose(gz) != Z_OK) throw Error("error writing " + file.string());
    }
}

std::vector<json> read_raw(const std::filesystem::path& file) {
    gzFile gz = gzopen(file.c_str(), "rb");
    if (!gz) throw Error("cannot open " + file.string());
    std::string text;
    char buf[1 << 14];
    int n;
    while ((n = gzread(gz, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
    gzclose(gz);
    if (n < 0) throw Error("corrupt gzip stream in " + file.string());
    std::vector<json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "summary.csv");
        write_summary_csv(out, result);
    }
    std::ofstream(dir / "table2.txt") << emit_table2(result);
    std::ofstream(dir / "table2.csv") << emit_table2_csv(result);
    const bool both = std::all_of(result.points.begin(), result.points.end(),
                                  [](const GridPointResult& p) { return p.mismatch && p.comparison; });
    if (both) {
        std::ofstream out(dir / "diffplot.csv");
        emit_comparison_plotdata(out, result);
    }
    write_raw(dir / "raw", result);
}

}  // namespace rla
