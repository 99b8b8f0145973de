#include <httplib.h>

#include "rla/auditservice.hpp"
#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send(res, status, json{{"error", message}, {"status", status}});
}

/// Runs `fn`, mapping ServiceError and malformed bodies to JSON error responses.
template <class F>
httplib::Server::Handler guarded(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.what());
        } catch (const json::parse_error& e) {
            send_error(res, 400, std::string("request body is not JSON: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) throw ServiceError(400, "request body is empty");
    return json::parse(req.body);
}

}  // namespace

json openapi_spec() {
    const json error_response{{"description", "Error"},
                              {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Error"}}}}}}}};
    auto ok = [](const char* description, const char* schema) {
        return json{{"description", description},
                    {"content", {{"application/json", {{"schema", {{"$ref", std::string("#/components/schemas/") + schema}}}}}}}};
    };
    const json id_param{{"name", "id"}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}};
    const json vote_schema{
        {"description", "null, {\"plurality\": candidate} or {\"ranking\": [candidates]}"},
        {"nullable", true},
        {"oneOf",
         json::array({{{"type", "object"},
                       {"required", json::array({"plurality"})},
                       {"properties", {{"plurality", {{"type", "string"}}}}}},
                      {{"type", "object"},
                       {"required", json::array({"ranking"})},
                       {"properties", {{"ranking", {{"type", "array"}, {"items", {{"type", "string"}}}}}}}}})}};

    json paths;
    paths["/audits"]["post"] = {
        {"summary", "Create an audit session"},
        {"requestBody",
         {{"required", true}, {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/CreateAudit"}}}}}}}}},
        {"responses", {{"201", ok("Session created", "Session")}, {"400", error_response}, {"422", error_response}}}};
    paths["/audits"]["get"] = {
        {"summary", "List session ids"},
        {"responses",
         {{"200",
           {{"description", "Session ids"},
            {"content",
             {{"application/json",
               {{"schema",
                 {{"type", "object"},
                  {"properties", {{"ids", {{"type", "array"}, {"items", {{"type", "string"}}}}}}}}}}}}}}}}}};
    paths["/audits/{id}"]["get"] = {{"summary", "Describe a session"},
                                    {"parameters", json::array({id_param})},
                                    {"responses", {{"200", ok("Session", "Session")}, {"404", error_response}}}};
    paths["/audits/{id}/next"]["get"] = {
        {"summary", "Next cards to retrieve, in sampling order; does not consume them"},
        {"parameters",
         json::array({id_param, {{"name", "k"}, {"in", "query"}, {"required", false}, {"schema", {{"type", "integer"}, {"minimum", 1}, {"default", 1}}}}})},
        {"responses", {{"200", ok("Next cards", "NextCards")}, {"404", error_response}, {"409", error_response}, {"422", error_response}}}};
    paths["/audits/{id}/mvr"]["post"] = {
        {"summary", "Record the audit board's reading of a sampled card"},
        {"parameters", json::array({id_param})},
        {"requestBody",
         {{"required", true}, {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Mvr"}}}}}}}}},
        {"responses", {{"200", ok("Updated status", "Status")}, {"404", error_response}, {"409", error_response}, {"422", error_response}}}};
    paths["/audits/{id}/status"]["get"] = {{"summary", "Live risk status"},
                                           {"parameters", json::array({id_param})},
                                           {"responses", {{"200", ok("Status", "Status")}, {"404", error_response}}}};
    paths["/audits/{id}/close"]["post"] = {{"summary", "Close a settled session"},
                                           {"parameters", json::array({id_param})},
                                           {"responses", {{"200", ok("Status", "Status")}, {"404", error_response}, {"409", error_response}}}};
    paths["/audits/{id}/verify"]["get"] = {
        {"summary", "Replay the audit trail and compare every step"},
        {"parameters", json::array({id_param})},
        {"responses", {{"200", ok("Replay report", "Replay")}, {"404", error_response}}}};
    paths["/spec"]["get"] = {{"summary", "This document"}, {"responses", {{"200", {{"description", "OpenAPI document"}}}}}};

    json schemas;
    schemas["Error"] = {{"type", "object"},
                        {"properties", {{"error", {{"type", "string"}}}, {"status", {{"type", "integer"}}}}}};
    schemas["Vote"] = vote_schema;
    schemas["CreateAudit"] = {
        {"type", "object"},
        {"required", json::array({"contest", "cvrs"})},
        {"properties",
         {{"contest",
           {{"type", "object"},
            {"properties",
             {{"id", {{"type", "string"}}},
              {"kind", {{"type", "string"}, {"enum", json::array({"plurality", "irv", "stv"})}}},
              {"candidates", {{"type", "array"}, {"items", {{"type", "string"}}}}},
              {"seats", {{"type", "integer"}}}}}}},
          {"cvrs",
           {{"type", "array"},
            {"items",
             {{"type", "object"},
              {"properties", {{"id", {{"type", "string"}}}, {"vote", {{"$ref", "#/components/schemas/Vote"}}}}}}}}},
          {"method", {{"type", "string"}, {"enum", json::array({"mismatch", "comparison"})}, {"default", "mismatch"}}},
          {"margin",
           {{"type", "object"},
            {"description", "CVR margin or lower bound in cards; computed for plurality contests when omitted"},
            {"properties", {{"V_minus", {{"type", "integer"}}}, {"source", {{"type", "string"}}}}}}},
          {"assertions", {{"description", "IRV assertions (comparison method)"}}},
          {"estimator", {{"type", "object"}, {"description", "shrink_trunc, fixed or cobra"}}},
          {"alpha", {{"type", "number"}, {"minimum", 0}, {"exclusiveMinimum", true}, {"maximum", 1}, {"exclusiveMaximum", true}, {"default", 0.05}}},
          {"seed", {{"type", "integer"}, {"minimum", 0}}},
          {"max_draws", {{"type", "integer"}}}}}};
    schemas["Session"] = {{"type", "object"},
                          {"properties",
                           {{"id", {{"type", "string"}}},
                            {"N", {{"type", "integer"}}},
                            {"method", {{"type", "string"}}},
                            {"alpha", {{"type", "number"}}},
                            {"seed", {{"type", "integer"}}},
                            {"assertions", {{"type", "array"}, {"items", {{"type", "string"}}}}},
                            {"status", {{"type", "string"}}},
                            {"contest", {{"type", "object"}}}}}};
    schemas["NextCards"] = {
        {"type", "object"},
        {"properties",
         {{"card_ids", {{"type", "array"}, {"items", {{"type", "string"}}}}},
          {"cards",
           {{"type", "array"},
            {"items",
             {{"type", "object"},
              {"properties",
               {{"card_id", {{"type", "string"}}}, {"position", {{"type", "integer"}}}, {"entered", {{"type", "boolean"}}}}}}}}},
          {"remaining", {{"type", "integer"}}},
          {"truncated", {{"type", "boolean"}, {"description", "k exceeded the cards remaining"}}}}}};
    schemas["Mvr"] = {{"type", "object"},
                      {"required", json::array({"card_id", "vote"})},
                      {"properties", {{"card_id", {{"type", "string"}}}, {"vote", {{"$ref", "#/components/schemas/Vote"}}}}}};
    schemas["Status"] = {
        {"type", "object"},
        {"properties",
         {{"id", {{"type", "string"}}},
          {"status", {{"type", "string"}, {"enum", json::array({"open", "certified", "full_count_required", "closed"})}}},
          {"decision", {{"type", "string"}, {"enum", json::array({"in_progress", "certified", "full_count"})}}},
          {"draws", {{"type", "integer"}}},
          {"N", {{"type", "integer"}}},
          {"alpha", {{"type", "number"}}},
          {"p_value", {{"type", "number"}}},
          {"mismatches", {{"type", "integer"}}},
          {"pending", {{"type", "integer"}}},
          {"window", {{"type", "integer"}}},
          {"assertions",
           {{"type", "array"},
            {"items",
             {{"type", "object"},
              {"properties",
               {{"label", {{"type", "string"}}},
                {"status", {{"type", "string"}}},
                {"p_value", {{"type", "number"}}},
                {"T", {{"type", "number"}, {"nullable", true}}}}}}}}},
          {"recent", {{"type", "array"}, {"items", {{"type", "object"}}}}}}}};
    schemas["Replay"] = {{"type", "object"},
                         {"properties",
                          {{"consistent", {{"type", "boolean"}}},
                           {"message", {{"type", "string"}}},
                           {"lines", {{"type", "integer"}}},
                           {"decision", {{"type", "string"}}},
                           {"final_T", {{"type", "array"}, {"items", {{"type", "number"}}}}}}}};

    return {{"openapi", "3.0.3"},
            {"info", {{"title", "Risk-limiting audit service"}, {"version", "1.0.0"}}},
            {"paths", paths},
            {"components", {{"schemas", schemas}}}};
}

void register_routes(httplib::Server& server, AuditService& service, const HttpOptions& options) {
    const std::string origin = options.cors_origin;
    server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Max-Age", "600");
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/spec", guarded([](const httplib::Request&, httplib::Response& res) { send(res, 200, openapi_spec()); }));

    server.Post("/audits", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    send(res, 201, service.create(body_json(req)));
                }));
    server.Get("/audits", guarded([&service](const httplib::Request&, httplib::Response& res) {
                   send(res, 200, json{{"ids", service.ids()}});
               }));
    server.Get("/audits/:id", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   send(res, 200, service.find(req.path_params.at("id"))->describe());
               }));
    server.Get("/audits/:id/next", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   auto session = service.find(req.path_params.at("id"));
                   std::int64_t k = 1;
                   if (req.has_param("k")) {
                       try {
                           std::size_t used = 0;
                           const std::string text = req.get_param_value("k");
                           k = std::stoll(text, &used);
                           if (used != text.size()) throw std::invalid_argument("k");
                       } catch (const std::exception&) {
                           throw ServiceError(422, "k must be a positive integer");
                       }
                   }
                   send(res, 200, session->next(k));
               }));
    server.Post("/audits/:id/mvr", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    auto session = service.find(req.path_params.at("id"));
                    json body = body_json(req);
                    if (!body.is_object() || !body.contains("card_id") || !body["card_id"].is_string() ||
                        !body.contains("vote")) {
                        throw ServiceError(422, "body must be {\"card_id\": string, \"vote\": vote}");
                    }
                    send(res, 200, session->submit(body["card_id"].get<std::string>(), body["vote"]));
                }));
    server.Get("/audits/:id/status", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   send(res, 200, service.find(req.path_params.at("id"))->status());
               }));
    server.Post("/audits/:id/close", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    send(res, 200, service.find(req.path_params.at("id"))->close());
                }));
    server.Get("/audits/:id/verify", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   ReplayReport r = service.find(req.path_params.at("id"))->verify_trail();
                   json T = json::array();
                   for (double t : r.final_T) T.push_back(std::isfinite(t) ? json(t) : json(nullptr));
                   send(res, 200,
                        json{{"consistent", r.consistent},
                             {"message", r.message},
                             {"lines", r.lines},
                             {"decision", std::string(to_string(r.decision))},
                             {"final_T", T}});
               }));
}

}  // namespace rla
