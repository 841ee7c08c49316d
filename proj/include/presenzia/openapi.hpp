#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace presenzia {

namespace detail {

inline nlohmann::json ref(const std::string& name) { return {{"$ref", "#/components/schemas/" + name}}; }

inline nlohmann::json json_body(const nlohmann::json& schema) {
  return {{"required", true}, {"content", {{"application/json", {{"schema", schema}}}}}};
}

inline nlohmann::json reply(const std::string& description, const nlohmann::json& schema = nullptr) {
  nlohmann::json r{{"description", description}};
  if (!schema.is_null()) r["content"] = {{"application/json", {{"schema", schema}}}};
  return r;
}

inline nlohmann::json with_errors(nlohmann::json responses, std::initializer_list<const char*> codes) {
  static const nlohmann::json err = ref("Error");
  for (const char* c : codes) {
    const std::string code(c);
    const char* what = code == "400"   ? "Invalid request"
                       : code == "401" ? "Missing or unknown bearer token"
                       : code == "403" ? "Role not allowed"
                       : code == "404" ? "Unknown resource"
                       : code == "409" ? "Conflicts with current state"
                                       : "Backend unavailable";
    responses[code] = reply(what, err);
  }
  return responses;
}

inline nlohmann::json id_param(const std::string& name) {
  return {{"name", name}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}};
}

inline nlohmann::json query_param(const std::string& name, const std::string& type, const std::string& description) {
  return {{"name", name}, {"in", "query"}, {"required", false}, {"schema", {{"type", type}}}, {"description", description}};
}

}  // namespace detail

/// OpenAPI 3 description of the REST surface served by HttpService.
inline nlohmann::json openapi_document() {
  using detail::ref;
  using detail::reply;
  using detail::with_errors;
  using nlohmann::json;

  const json string_t{{"type", "string"}};
  const json number_t{{"type", "number"}};
  const json integer_t{{"type", "integer"}};
  const json millis{{"type", "integer"}, {"format", "int64"}, {"description", "milliseconds since the Unix epoch"}};
  const json nullable_number{{"type", "number"}, {"nullable", true}};
  const json nullable_string{{"type", "string"}, {"nullable", true}};

  json schemas;
  schemas["Error"] = {{"type", "object"},
                      {"required", {"code", "message"}},
                      {"properties", {{"code", string_t}, {"message", string_t}}}};
  schemas["Employee"] = {
      {"type", "object"},
      {"required", {"employee_id", "name", "contact"}},
      {"properties",
       {{"employee_id", string_t},
        {"name", string_t},
        {"contact", {{"type", "string"}, {"format", "email"}}},
        {"role", {{"type", "string"}, {"enum", {"admin", "employee"}}}},
        {"active", {{"type", "boolean"}}},
        {"enrollment_image_refs", {{"type", "array"}, {"items", string_t}, {"readOnly", true}}}}}};
  schemas["NewEmployee"] = {
      {"allOf",
       {ref("Employee"),
        {{"type", "object"},
         {"required", {"images"}},
         {"properties",
          {{"images", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "string"}, {"format", "byte"}}},
                       {"description", "base64 PNG or JPEG enrollment photos"}}}}}}}}};
  schemas["EmployeePatch"] = {
      {"type", "object"},
      {"properties",
       {{"name", string_t},
        {"contact", {{"type", "string"}, {"format", "email"}}},
        {"role", {{"type", "string"}, {"enum", {"admin", "employee"}}}},
        {"active", {{"type", "boolean"}}},
        {"images", {{"type", "array"}, {"items", {{"type", "string"}, {"format", "byte"}}},
                    {"description", "replaces the gallery entry when present"}}}}}};
  schemas["Session"] = {{"type", "object"},
                        {"properties",
                         {{"session_id", string_t},
                          {"employee_id", string_t},
                          {"started_at", millis},
                          {"ended_at", {{"type", "integer"}, {"nullable", true}}},
                          {"status", {{"type", "string"}, {"enum", {"active", "ended", "ended_by_admin"}}}},
                          {"miss_run", integer_t},
                          {"checks_done", integer_t},
                          {"planned_duration_ms", integer_t}}}};
  schemas["Schedule"] = {{"type", "object"},
                         {"properties",
                          {{"session_id", string_t},
                           {"check_times", {{"type", "array"}, {"items", millis}}},
                           {"segment_count", integer_t},
                           {"rng_seed", integer_t}}}};
  schemas["SessionWithSchedule"] = {
      {"type", "object"}, {"properties", {{"session", ref("Session")}, {"schedule", ref("Schedule")}}}};
  schemas["Check"] = {{"type", "object"},
                      {"properties",
                       {{"session_id", string_t},
                        {"at", millis},
                        {"outcome", {{"type", "string"}, {"enum", {"present", "no_face", "unknown_face", "wrong_person"}}}},
                        {"best_distance", nullable_number},
                        {"frame_ref", nullable_string}}}};
  schemas["Detection"] = {
      {"type", "object"},
      {"properties",
       {{"box", {{"type", "object"}, {"properties", {{"x", number_t}, {"y", number_t}, {"w", number_t}, {"h", number_t}}}}},
        {"prob", number_t},
        {"landmarks", {{"type", "array"}, {"items", {{"type", "array"}, {"items", number_t}, {"minItems", 2}, {"maxItems", 2}}}}}}}};
  schemas["Identification"] = {
      {"type", "object"},
      {"properties",
       {{"candidates",
         {{"type", "array"},
          {"items", {{"type", "object"}, {"properties", {{"person_id", string_t}, {"distance", number_t}}}}}}},
        {"decision", {{"type", "string"}, {"description", "person id or UNKNOWN"}}}}}};
  schemas["Delivery"] = {{"type", "object"},
                         {"properties",
                          {{"alert_id", string_t},
                           {"deliveries",
                            {{"type", "array"},
                             {"items",
                              {{"type", "object"},
                               {"properties",
                                {{"recipient_role", string_t},
                                 {"recipient_id", string_t},
                                 {"status", {{"type", "string"}, {"enum", {"delivered", "already_delivered", "dead_lettered"}}}},
                                 {"attempts", integer_t}}}}}}}}}};
  schemas["FrameResponse"] = {
      {"type", "object"},
      {"properties",
       {{"outcome", {{"type", "string"}}},
        {"decision", nullable_string},
        {"alert_id", nullable_string},
        {"check", ref("Check")},
        {"session", ref("Session")},
        {"faces",
         {{"type", "array"},
          {"items", {{"type", "object"}, {"properties", {{"detection", ref("Detection")}, {"identification", ref("Identification")}}}}}}},
        {"delivery", {{"allOf", {ref("Delivery")}}, {"nullable", true}}}}}};
  schemas["Alert"] = {{"type", "object"},
                      {"properties",
                       {{"alert_id", string_t},
                        {"session_id", string_t},
                        {"employee_id", string_t},
                        {"triggered_at", millis},
                        {"miss_run_length", integer_t},
                        {"recipients", {{"type", "array"}, {"items", string_t}}},
                        {"deliveries", {{"type", "array"}, {"items", {{"type", "object"}}}}}}}};
  schemas["ArchiveRecord"] = {
      {"type", "object"},
      {"properties",
       {{"sequence", integer_t},
        {"check", ref("Check")},
        {"employee",
         {{"type", "object"}, {"properties", {{"employee_id", string_t}, {"name", string_t}, {"contact", string_t}}}}}}}};
  schemas["TokenRequest"] = {{"type", "object"},
                             {"required", {"role", "principal_id"}},
                             {"properties",
                              {{"role", {{"type", "string"}, {"enum", {"admin", "employee", "auditor"}}}},
                               {"principal_id", string_t}}}};
  schemas["Token"] = {{"type", "object"},
                      {"properties", {{"token", string_t}, {"principal_id", string_t}, {"role", string_t}}}};

  const json bearer = json::array({{{"bearer", json::array()}}});
  json paths;
  paths["/healthz"]["get"] = {{"summary", "Liveness probe"},
                              {"security", json::array()},
                              {"responses", {{"200", reply("Service is up", {{"type", "object"}, {"properties", {{"status", string_t}}}})}}}};
  paths["/openapi.json"]["get"] = {
      {"summary", "This document"}, {"security", json::array()}, {"responses", {{"200", reply("OpenAPI document", {{"type", "object"}})}}}};
  paths["/employees"]["get"] = {
      {"summary", "List employees sorted by id (admin)"},
      {"responses", with_errors({{"200", reply("Employees", {{"type", "array"}, {"items", ref("Employee")}})}}, {"401", "403"})}};
  paths["/employees"]["post"] = {
      {"summary", "Add an employee and enroll their photos (admin)"},
      {"description", "JSON body, or multipart/form-data with a 'record' JSON part and one or more 'images' file parts."},
      {"requestBody",
       {{"required", true},
        {"content",
         {{"application/json", {{"schema", ref("NewEmployee")}}},
          {"multipart/form-data",
           {{"schema",
             {{"type", "object"},
              {"properties",
               {{"record", {{"type", "string"}, {"description", "Employee JSON"}}},
                {"images", {{"type", "array"}, {"items", {{"type", "string"}, {"format", "binary"}}}}}}}}}}}}}}},
      {"responses", with_errors({{"201", reply("Created", ref("Employee"))}}, {"400", "401", "403", "409"})}};
  const json emp_id = json::array({detail::id_param("employee_id")});
  paths["/employees/{employee_id}"]["parameters"] = emp_id;
  paths["/employees/{employee_id}"]["get"] = {
      {"summary", "Read an employee (admin or the employee)"},
      {"responses", with_errors({{"200", reply("Employee", ref("Employee"))}}, {"401", "403", "404"})}};
  paths["/employees/{employee_id}"]["put"] = {
      {"summary", "Patch an employee; new images replace the gallery entry (admin)"},
      {"requestBody", detail::json_body(ref("EmployeePatch"))},
      {"responses", with_errors({{"200", reply("Updated", ref("Employee"))}}, {"400", "401", "403", "404"})}};
  paths["/employees/{employee_id}"]["delete"] = {
      {"summary", "Delete an employee; purges embeddings and ends any active session (admin)"},
      {"responses", with_errors({{"204", reply("Deleted")}}, {"401", "403", "404"})}};
  paths["/sessions"]["get"] = {
      {"summary", "List sessions (admin: all, employee: own)"},
      {"responses", with_errors({{"200", reply("Sessions", {{"type", "array"}, {"items", ref("Session")}})}}, {"401", "403"})}};
  paths["/sessions"]["post"] = {
      {"summary", "Start a work session for the calling employee"},
      {"requestBody",
       {{"required", false},
        {"content", {{"application/json", {{"schema", {{"type", "object"}, {"properties", {{"duration_minutes", integer_t}}}}}}}}}}},
      {"responses", with_errors({{"201", reply("Started", ref("SessionWithSchedule"))}}, {"400", "401", "403", "409"})}};
  const json sess_id = json::array({detail::id_param("session_id")});
  paths["/sessions/{session_id}"]["parameters"] = sess_id;
  paths["/sessions/{session_id}"]["get"] = {
      {"summary", "Read a session and its check schedule (owner or admin)"},
      {"responses", with_errors({{"200", reply("Session", ref("SessionWithSchedule"))}}, {"401", "403", "404"})}};
  paths["/sessions/{session_id}/frames"]["parameters"] = sess_id;
  paths["/sessions/{session_id}/frames"]["post"] = {
      {"summary", "Submit a webcam frame for a presence check (owner)"},
      {"description", "Raw PNG/JPEG body (at most 8 MiB), or multipart/form-data with a 'frame' file part."},
      {"requestBody",
       {{"required", true},
        {"content",
         {{"image/png", {{"schema", {{"type", "string"}, {"format", "binary"}}}}},
          {"image/jpeg", {{"schema", {{"type", "string"}, {"format", "binary"}}}}},
          {"multipart/form-data",
           {{"schema", {{"type", "object"}, {"properties", {{"frame", {{"type", "string"}, {"format", "binary"}}}}}}}}}}}}},
      {"responses", with_errors({{"200", reply("Check recorded", ref("FrameResponse"))}}, {"400", "401", "403", "404", "409"})}};
  paths["/sessions/{session_id}/end"]["parameters"] = sess_id;
  paths["/sessions/{session_id}/end"]["post"] = {
      {"summary", "End a session (owner or admin)"},
      {"responses", with_errors({{"200", reply("Ended", ref("Session"))}}, {"401", "403", "404", "409"})}};
  paths["/alerts"]["get"] = {
      {"summary", "Consecutive-miss alerts (admin: all, employee: own)"},
      {"responses", with_errors({{"200", reply("Alerts", {{"type", "array"}, {"items", ref("Alert")}})}}, {"401", "403"})}};
  paths["/archive"]["get"] = {
      {"summary", "Recognition archive (auditor; employees with self=1). Admins are refused."},
      {"parameters",
       {detail::query_param("self", "integer", "1 to read the caller's own records"),
        detail::query_param("employee_id", "string", "filter"),
        detail::query_param("session_id", "string", "filter"),
        detail::query_param("from", "integer", "inclusive lower bound, epoch ms"),
        detail::query_param("to", "integer", "exclusive upper bound, epoch ms"),
        detail::query_param("outcome", "string", "present | no_face | unknown_face | wrong_person")}},
      {"responses", with_errors({{"200", reply("Records", {{"type", "array"}, {"items", ref("ArchiveRecord")}})}}, {"400", "401", "403"})}};
  paths["/tokens"]["post"] = {
      {"summary", "Issue a bearer token (admin)"},
      {"requestBody", detail::json_body(ref("TokenRequest"))},
      {"responses", with_errors({{"201", reply("Issued", ref("Token"))}}, {"400", "401", "403", "404"})}};
  paths["/sweep"]["post"] = {
      {"summary", "Record no_face checks for scheduled slots past their grace window (admin)"},
      {"responses", with_errors({{"200", reply("Recorded checks", {{"type", "array"}, {"items", ref("Check")}})}}, {"401", "403"})}};

  return {{"openapi", "3.0.3"},
          {"info", {{"title", "Presenzia attendance service"}, {"version", "1.0.0"}}},
          {"security", bearer},
          {"paths", paths},
          {"components",
           {{"schemas", schemas}, {"securitySchemes", {{"bearer", {{"type", "http"}, {"scheme", "bearer"}}}}}}}};
}

}  // namespace presenzia
