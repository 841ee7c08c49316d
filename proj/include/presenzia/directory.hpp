#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/detection.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/image.hpp"

namespace presenzia {

enum class Role { admin, employee, auditor };

constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::admin: return "admin";
    case Role::employee: return "employee";
    case Role::auditor: return "auditor";
  }
  return "?";
}

inline Role role_from_string(std::string_view s) {
  if (s == "admin") return Role::admin;
  if (s == "employee") return Role::employee;
  if (s == "auditor") return Role::auditor;
  fail(ErrorCode::ValidationError, "unknown role '" + std::string(s) + "'");
}

struct EmployeeRecord {
  std::string employee_id;
  std::string name;
  std::string contact;  // email
  Role role = Role::employee;
  bool active = true;
  std::vector<std::string> enrollment_image_refs;

  friend bool operator==(const EmployeeRecord&, const EmployeeRecord&) = default;
};

// Fields left empty are not touched by update_employee.
struct EmployeePatch {
  std::optional<std::string> name;
  std::optional<std::string> contact;
  std::optional<Role> role;
  std::optional<bool> active;
};

inline bool valid_email(std::string_view email) {
  static const std::regex pattern(R"(^[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(\.[A-Za-z0-9\-]+)+$)");
  return std::regex_match(email.begin(), email.end(), pattern);
}

inline void validate(const EmployeeRecord& r) {
  if (r.employee_id.empty() || r.employee_id.size() > 128)
    fail(ErrorCode::ValidationError, "employee_id must be 1..128 characters");
  if (r.employee_id.find_first_of("/?#\\ \t\r\n") != std::string::npos)
    fail(ErrorCode::ValidationError, "employee_id contains reserved characters");
  if (r.name.empty()) fail(ErrorCode::ValidationError, "name must not be empty");
  if (!valid_email(r.contact)) fail(ErrorCode::ValidationError, "contact '" + r.contact + "' is not a valid email");
  if (r.role == Role::auditor) fail(ErrorCode::ValidationError, "employee records are admin or employee");
}

inline EmployeeRecord apply_patch(EmployeeRecord r, const EmployeePatch& patch) {
  if (patch.name) r.name = *patch.name;
  if (patch.contact) r.contact = *patch.contact;
  if (patch.role) r.role = *patch.role;
  if (patch.active) r.active = *patch.active;
  validate(r);
  return r;
}

/// In-memory employee table, ordered by id.
class Directory {
 public:
  const EmployeeRecord* find(const std::string& id) const {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }

  const EmployeeRecord& get(const std::string& id) const {
    const auto* r = find(id);
    if (!r) fail(ErrorCode::NotFound, "employee " + id);
    return *r;
  }

  void put(EmployeeRecord r) {
    auto id = r.employee_id;
    records_.insert_or_assign(std::move(id), std::move(r));
  }
  void erase(const std::string& id) { records_.erase(id); }

  std::vector<EmployeeRecord> list() const {
    std::vector<EmployeeRecord> out;
    out.reserve(records_.size());
    for (const auto& [_, r] : records_) out.push_back(r);
    return out;
  }

  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::map<std::string, EmployeeRecord> records_;
};

/// Embeds enrollment photos: highest-probability face per image. Any image
/// without a face fails the whole enrollment.
inline std::vector<Embedding> embed_enrollment_images(std::span<const RgbImage> images, const FaceDetector& detector,
                                                      const EmbedderBackend& embedder) {
  if (images.empty()) fail(ErrorCode::EnrollmentFailed, "at least one enrollment image is required");
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<Detection> faces;
    try {
      faces = detector.detect(images[i]);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidImage) fail(ErrorCode::EnrollmentFailed, "image " + std::to_string(i) + ": " + e.detail());
      throw;
    }
    if (faces.empty()) fail(ErrorCode::EnrollmentFailed, "no face found in enrollment image " + std::to_string(i));
    out.push_back(embedder.embed(crop_and_resize(images[i], faces.front().box, kCanonicalChipSide)));
  }
  return out;
}

inline nlohmann::json to_json(const EmployeeRecord& r) {
  return {{"employee_id", r.employee_id},
          {"name", r.name},
          {"contact", r.contact},
          {"role", std::string(to_string(r.role))},
          {"active", r.active},
          {"enrollment_image_refs", r.enrollment_image_refs}};
}

inline EmployeeRecord employee_from_json(const nlohmann::json& j) {
  EmployeeRecord r;
  try {
    r.employee_id = j.at("employee_id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.contact = j.at("contact").get<std::string>();
    r.role = role_from_string(j.value("role", std::string("employee")));
    r.active = j.value("active", true);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("employee record: ") + e.what());
  }
  return r;
}

inline EmployeePatch patch_from_json(const nlohmann::json& j) {
  EmployeePatch p;
  try {
    if (j.contains("name")) p.name = j.at("name").get<std::string>();
    if (j.contains("contact")) p.contact = j.at("contact").get<std::string>();
    if (j.contains("role")) p.role = role_from_string(j.at("role").get<std::string>());
    if (j.contains("active")) p.active = j.at("active").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("employee patch: ") + e.what());
  }
  return p;
}

}  // namespace presenzia
