#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "rla/assorters.hpp"
#include "rla/auditservice.hpp"
#include "rla/error.hpp"
#include "rla/errormodels.hpp"
#include "rla/margins.hpp"
#include "rla/riskengine.hpp"
#include "rla/simharness.hpp"
#include "rla/socialchoice.hpp"

using nlohmann::json;
using namespace rla;

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

CvrSet read_cvrs(const std::string& path, const Contest& contest) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path);
        return CvrSet(parse_plurality_csv(in, contest));
    }
    return parse_cvrs(path, contest);
}

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

struct AuditInputs {
    std::string contest, cvrs, ballots, margin, assertions, estimator, log;
    std::string method = "mismatch";
    double alpha = 0.05;
    std::uint64_t seed = 0;
};

void add_audit_options(CLI::App* cmd, AuditInputs& in) {
    cmd->add_option("--contest", in.contest, "contest JSON")->required();
    cmd->add_option("--cvrs", in.cvrs, "CVR NDJSON (or plurality CSV)")->required();
    cmd->add_option("--method", in.method, "mismatch or comparison")->check(CLI::IsMember({"mismatch", "comparison"}));
    cmd->add_option("--margin", in.margin, "margin JSON {V_minus, source}");
    cmd->add_option("--assertions", in.assertions, "IRV assertions JSON");
    cmd->add_option("--estimator", in.estimator, "estimator JSON");
    cmd->add_option("--alpha", in.alpha, "risk limit");
    cmd->add_option("--seed", in.seed, "sampling seed");
}

std::vector<AuditTarget> build_targets(const AuditInputs& in, const Contest& contest, const CvrSet& cvrs) {
    std::optional<EstimatorConfig> est;
    if (!in.estimator.empty()) est = estimator_from_json(read_json(in.estimator));
    std::vector<AuditTarget> targets;
    auto votes = cvrs.votes();
    if (in.method == "mismatch") {
        MarginReport margin;
        if (!in.margin.empty()) {
            margin = load_external_margin(in.margin, static_cast<Count>(cvrs.size()));
        } else if (contest.kind == ContestKind::plurality) {
            margin = plurality_cvr_margin(cvrs, contest);
        } else {
            throw Error("--margin is required for mismatch audits of " + std::string(to_string(contest.kind)) + " contests");
        }
        targets.push_back(est ? mismatch_target(margin, *est) : mismatch_target(margin));
    } else {
        AssertionSet set;
        if (contest.kind == ContestKind::plurality) {
            set = plurality_assertions(contest, votes);
        } else {
            if (in.assertions.empty()) throw Error("--assertions is required for comparison audits of this contest");
            set = irv_assertion_assorters(read_json(in.assertions), contest, votes);
        }
        for (const auto& a : set.assertions) targets.push_back(est ? comparison_target(a, *est) : comparison_target(a));
    }
    return targets;
}

int cmd_tabulate(const std::string& contest_path, const std::string& cvrs_path) {
    Contest contest = load_contest(contest_path);
    auto votes = read_cvrs(cvrs_path, contest).votes();
    json out;
    switch (contest.kind) {
        case ContestKind::plurality: out = to_json(tabulate_plurality(votes, contest), contest); break;
        case ContestKind::irv: out = to_json(tabulate_irv(votes, contest), contest); break;
        case ContestKind::stv: throw Error("STV tabulation is not supported; supply a margin lower bound instead");
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_margin(const std::string& contest_path, const std::string& cvrs_path, int max_radius, unsigned workers,
               bool last_round) {
    Contest contest = load_contest(contest_path);
    CvrSet cvrs = read_cvrs(cvrs_path, contest);
    MarginReport report;
    if (last_round) {
        if (contest.kind != ContestKind::irv) throw Error("--last-round applies to IRV contests");
        report = irv_last_round_margin(tabulate_irv(cvrs.votes(), contest).rounds);
    } else if (contest.kind == ContestKind::plurality) {
        report = plurality_cvr_margin(cvrs, contest);
    } else {
        BruteForceOptions options;
        options.max_radius = max_radius;
        options.workers = workers;
        report = hamming_margin_bruteforce(cvrs, contest, options);
    }
    std::cout << to_json(report, contest).dump(2) << '\n';
    return 0;
}

int cmd_audit(const AuditInputs& in) {
    Contest contest = load_contest(in.contest);
    CvrSet cvrs = read_cvrs(in.cvrs, contest);
    BallotSet ballots = parse_ballots(in.ballots, contest);
    LinkedInstance instance = link(contest, cvrs, ballots);
    auto targets = build_targets(in, contest, cvrs);
    AuditConfig config;
    config.alpha = in.alpha;
    config.seed = in.seed;
    RunOptions options;
    std::ofstream log;
    if (!in.log.empty()) {
        log.open(in.log);
        if (!log) throw Error("cannot write " + in.log);
        options.log = &log;
    }
    AuditResult result = run_audit(instance, targets, config, options);
    json out = to_json(result);
    out["mismatches"] = instance.mismatch_count();
    std::cout << out.dump(2) << '\n';
    return 0;
}

int report_replay(const ReplayReport& r) {
    json T = json::array();
    for (double t : r.final_T) T.push_back(std::isfinite(t) ? json(t) : json(nullptr));
    std::cout << json{{"consistent", r.consistent},
                      {"message", r.message},
                      {"lines", r.lines},
                      {"decision", std::string(to_string(r.decision))},
                      {"final_T", T}}
                     .dump(2)
              << '\n';
    return r.consistent ? 0 : 1;
}

int cmd_replay(const AuditInputs& in, const std::string& session_dir) {
    if (!session_dir.empty()) return report_replay(Session::load(session_dir)->verify_trail());
    if (in.contest.empty() || in.cvrs.empty() || in.log.empty()) {
        throw Error("replay needs --session, or --contest, --cvrs and --log");
    }
    Contest contest = load_contest(in.contest);
    CvrSet cvrs = read_cvrs(in.cvrs, contest);
    LinkedInstance instance;
    instance.contest = contest;
    for (const auto& r : cvrs) {
        instance.card_ids.push_back(r.card_id);
        instance.cvrs.push_back(r.vote);
    }
    instance.ballots = instance.cvrs;
    auto targets = build_targets(in, contest, cvrs);
    AuditConfig config;
    config.alpha = in.alpha;
    config.seed = in.seed;
    std::ifstream log(in.log);
    if (!log) throw Error("cannot open " + in.log);
    return report_replay(replay_audit_log(log, instance, targets, config));
}

int cmd_generate(const std::string& scenario_path, const std::string& out_dir) {
    const auto base = std::filesystem::path(scenario_path).parent_path();
    ScenarioSpec spec = scenario_from_json(read_json(scenario_path), base);
    GeneratedInstance g = generate(spec);
    export_instance(g, out_dir);
    json out{{"id", spec.id()},
             {"N", g.instance.size()},
             {"V", g.margin.V},
             {"mismatches", g.instance.mismatch_count()},
             {"out", out_dir}};
    if (g.reported_outcome_correct) out["reported_outcome_correct"] = *g.reported_outcome_correct;
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, int jobs) {
    const auto base = std::filesystem::path(config_path).parent_path();
    ExperimentConfig config = experiment_from_json(read_json(config_path), base);
    if (jobs > 0) config.jobs = jobs;
    ExperimentResult result = run_experiment(config);
    write_outputs(out_dir, result);
    std::cout << emit_table2(result);
    for (const auto& p : result.points) {
        if (p.skipped) std::cerr << "note: " << p.id << ": " << *p.skipped << '\n';
    }
    return 0;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(std::string bind, int port, std::string sessions, bool demo, const std::string& demo_scenario) {
    AuditService service(sessions);
    if (demo) {
        ScenarioSpec spec;
        if (!demo_scenario.empty()) {
            spec = scenario_from_json(read_json(demo_scenario), std::filesystem::path(demo_scenario).parent_path());
        } else {
            spec.N = 10000;
            spec.v_target = make_rational(6, 100);
            spec.m_target = 0;
            spec.model = ErrorModel::two_over;
            spec.seed = 1;
        }
        GeneratedInstance g = generate(spec);
        json request{{"contest", to_json(g.instance.contest)},
                     {"method", "mismatch"},
                     {"margin", {{"V_minus", g.margin.V}, {"source", "demo " + spec.id()}}},
                     {"alpha", 0.05},
                     {"seed", spec.seed}};
        json cvrs = json::array();
        for (std::size_t i = 0; i < g.instance.size(); ++i) {
            cvrs.push_back({{"id", g.instance.card_ids[i]}, {"vote", to_json(g.instance.cvrs[i], g.instance.contest)}});
        }
        request["cvrs"] = std::move(cvrs);
        json created = service.create(request);
        const auto ballots_path = std::filesystem::path(sessions) / created["id"].get<std::string>() / "demo_ballots.ndjson";
        std::vector<CardRecord> records;
        for (std::size_t i = 0; i < g.instance.size(); ++i) records.push_back({g.instance.card_ids[i], g.instance.ballots[i]});
        std::ofstream out(ballots_path);
        write_card_records(out, records, g.instance.contest);
        std::cout << "demo session " << created["id"].get<std::string>() << " (" << spec.id() << "), card contents in "
                  << ballots_path.string() << '\n';
    }
    httplib::Server server;
    HttpOptions options;
    options.cors_origin = env_or("RLA_CORS_ORIGIN", "*");
    register_routes(server, service, options);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::cout << "listening on http://" << bind << ':' << port << " (sessions in " << sessions << ")" << std::endl;
    if (!server.listen(bind, port)) {
        std::cerr << "error: cannot listen on " << bind << ':' << port << '\n';
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-limiting audit toolkit"};
    app.require_subcommand(1);

    std::string contest, cvrs, out_dir, scenario, config_path, session_dir;
    int max_radius = 2;
    unsigned workers = 1;
    bool last_round = false;
    int jobs = 0;

    auto* tab = app.add_subcommand("tabulate", "Tabulate CVRs");
    tab->add_option("--contest", contest, "contest JSON")->required();
    tab->add_option("--cvrs", cvrs, "CVR NDJSON (or plurality CSV)")->required();

    auto* margin = app.add_subcommand("margin", "CVR margin");
    margin->add_option("--contest", contest, "contest JSON")->required();
    margin->add_option("--cvrs", cvrs, "CVR NDJSON (or plurality CSV)")->required();
    margin->add_option("--max-radius", max_radius, "brute-force search radius");
    margin->add_option("--workers", workers, "brute-force threads");
    margin->add_flag("--last-round", last_round, "IRV final-round gap (diagnostic upper bound)");

    AuditInputs audit_in;
    auto* audit = app.add_subcommand("audit", "Run an audit against card contents");
    add_audit_options(audit, audit_in);
    audit->add_option("--ballots", audit_in.ballots, "card contents NDJSON")->required();
    audit->add_option("--log", audit_in.log, "write the audit log here");

    AuditInputs replay_in;
    auto* replay = app.add_subcommand("replay", "Verify an audit log or a service session trail");
    replay->add_option("--session", session_dir, "session directory");
    replay->add_option("--contest", replay_in.contest, "contest JSON");
    replay->add_option("--cvrs", replay_in.cvrs, "CVR NDJSON");
    replay->add_option("--log", replay_in.log, "audit log NDJSON");
    replay->add_option("--method", replay_in.method, "mismatch or comparison");
    replay->add_option("--margin", replay_in.margin, "margin JSON");
    replay->add_option("--assertions", replay_in.assertions, "IRV assertions JSON");
    replay->add_option("--estimator", replay_in.estimator, "estimator JSON");
    replay->add_option("--alpha", replay_in.alpha, "risk limit");
    replay->add_option("--seed", replay_in.seed, "sampling seed");

    auto* gen = app.add_subcommand("generate", "Generate a simulated election from a scenario");
    gen->add_option("--scenario", scenario, "scenario JSON")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* sim = app.add_subcommand("simulate", "Run an experiment grid");
    sim->add_option("--config", config_path, "experiment JSON")->required();
    sim->add_option("--out", out_dir, "output directory")->required();
    sim->add_option("--jobs", jobs, "worker threads");

    std::string bind = env_or("RLA_BIND", "127.0.0.1");
    int port = std::atoi(env_or("RLA_PORT", "8080").c_str());
    std::string sessions = env_or("RLA_SESSIONS_DIR", "sessions");
    bool demo = false;
    std::string demo_scenario;
    auto* serve = app.add_subcommand("serve", "Run the audit service");
    serve->add_option("--bind", bind, "bind address (env RLA_BIND)");
    serve->add_option("--port", port, "port (env RLA_PORT)");
    serve->add_option("--sessions", sessions, "session directory (env RLA_SESSIONS_DIR)");
    serve->add_flag("--demo", demo, "create a demo session from a generated scenario");
    serve->add_option("--demo-scenario", demo_scenario, "scenario JSON for --demo");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*tab) return cmd_tabulate(contest, cvrs);
        if (*margin) return cmd_margin(contest, cvrs, max_radius, workers, last_round);
        if (*audit) return cmd_audit(audit_in);
        if (*replay) return cmd_replay(replay_in, session_dir);
        if (*gen) return cmd_generate(scenario, out_dir);
        if (*sim) return cmd_simulate(config_path, out_dir, jobs);
        if (*serve) return cmd_serve(bind, port, sessions, demo, demo_scenario);
    } catch (const ServiceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
